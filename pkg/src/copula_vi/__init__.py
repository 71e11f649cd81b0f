"""Copula-augmented variational inference with vine copulas."""

from .bicop import FamilyTag, PairCopula, Rotation
from .cvi import Adam, CviConfig, FitTrace, RobbinsMonro, fit, step_size
from .dist import CopulaVariationalDist
from .grad import GradEstimate, TargetModel, elbo, grad_reparam, grad_score
from .marginal import Marginal, MarginalKind, MarginalSet
from .models import GaussianTarget, MixtureTarget, fd_wrap
from .vine import Vine, VineEdge, compile_plan, cvine, dvine, validate

__all__ = [
    "Adam", "CopulaVariationalDist", "CviConfig", "FamilyTag", "FitTrace", "GaussianTarget", "GradEstimate",
    "Marginal", "MarginalKind", "MarginalSet", "MixtureTarget", "PairCopula", "RobbinsMonro", "Rotation",
    "TargetModel", "Vine", "VineEdge", "compile_plan", "cvine", "dvine", "elbo", "fd_wrap", "fit",
    "grad_reparam", "grad_score", "step_size", "validate",
]
