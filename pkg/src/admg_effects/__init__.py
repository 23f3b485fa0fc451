"""Identification and estimation of a single treatment effect in hidden-variable
causal models represented by acyclic directed mixed graphs."""

from importlib.resources import files

from .graph import Admg, latent_projection, load_graph, parse_graph, format_graph

__version__ = "0.1.0"


def fixture(name: str) -> Admg:
    """Load one of the bundled example graphs by name (without extension)."""
    path = files(__name__) / "fixtures" / f"{name}.txt"
    return parse_graph(path.read_text(encoding="utf-8"))


__all__ = ["Admg", "fixture", "format_graph", "latent_projection", "load_graph", "parse_graph"]
