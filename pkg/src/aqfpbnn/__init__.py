"""Simulation and training toolkit for stochastic superconducting BNN accelerators.

Numpy/scipy carry the device, crossbar, stochastic-computing and cost models;
torch is used only as the autograd backend for training.
"""
__version__ = "0.1.0"
