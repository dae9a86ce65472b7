"""Video game identification from screenshots: catalog harvesting, curation, training, evaluation, serving."""

__version__ = "0.1.0"
