"""Greedy ensembles of searched image-feature pipelines with linear SVMs."""
from . import hyperboost, optimizer, pipeline, searchspace, svm
from .searchspace import Configuration, SearchSpace, define_space, load_space

__version__ = "0.1.0"
__all__ = ["Configuration", "SearchSpace", "define_space", "hyperboost", "load_space", "optimizer", "pipeline",
           "searchspace", "svm"]
