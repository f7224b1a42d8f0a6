"""Hierarchical multi-label prompt tuning for ingredient recognition."""

from hierprompt.hierarchy import Hierarchy, HierarchyError, LabelSpace, load_hierarchy

__version__ = "0.1.0"

__all__ = ["Hierarchy", "HierarchyError", "LabelSpace", "load_hierarchy", "__version__"]
