"""Lyapunov exponents of locally constant SL(2,R) cocycles over Bernoulli shifts."""
