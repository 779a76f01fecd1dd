"""Testing for p-hacking with restrictions on the distribution of p-values.

Modules
-------
nullmodel    p-curves of t-tests in the absence of p-hacking
bounds       upper bounds on p-curves and on binned proportions
constraints  linear inequality systems on binned proportions
estimators   samples, histograms, covariances, empirical CDFs
stattests    Binomial, Fisher, CS1, CS2B, LCM and discontinuity tests
simulate     sampling with and without specification search, Monte Carlo studies
ingest       CSV input and output
cli          the ``phack`` command
"""

__version__ = "0.1.0"
