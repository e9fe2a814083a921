"""essoil: essential-oil property prediction from chemical composition.

Pipeline: SMILES parsing and fingerprints (:mod:`essoil.chem`), table
ingestion and sample assembly (:mod:`essoil.dataset`), a minimal
reverse-mode autodiff engine (:mod:`essoil.autodiff`), three regressor
architectures with two loss designs (:mod:`essoil.models`), and K-fold
AUC/ROC evaluation (:mod:`essoil.evaluation`). ``essoil.kernels`` holds
the numba/numpy dual-backend hot loops.
"""

__version__ = "0.1.0"
