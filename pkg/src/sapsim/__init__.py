"""Compliant frictional contact simulation with a convex primal solver."""
from __future__ import annotations

from .model import (FreeBody, GeneralizedState, HalfSpace, Material, Particle, PrismaticBody,
                    RevoluteBody, Sphere, SystemModel)
from .scheme import ThetaScheme, assemble_contact_problem, step
from .sap import SolverOptions, SolveResult, solve

__all__ = [
    "FreeBody", "GeneralizedState", "HalfSpace", "Material", "Particle", "PrismaticBody",
    "RevoluteBody", "Sphere", "SystemModel", "ThetaScheme", "assemble_contact_problem", "step",
    "SolverOptions", "SolveResult", "solve",
]
