"""
Numerical services: transport solvers, embeddings, kernels, GP models and training.
"""
