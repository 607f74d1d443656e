"""Deterministic figure rendering for bayesfilt benchmark output files."""

from .figures import FIGURE_IDS, FigureSpec, RenderResult, render

__all__ = ["FIGURE_IDS", "FigureSpec", "RenderResult", "render"]
