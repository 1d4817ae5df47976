"""NV-center spin simulator: Hamiltonian spectra, open-system dynamics, pulse sequences, fitting."""

__version__ = "0.1.0"
