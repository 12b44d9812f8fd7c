"""Fast PSSM profile generation: k-mer prefilter, gapped alignment, profile building."""

__version__ = "0.1.0"
