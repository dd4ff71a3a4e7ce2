"""Private running-mean estimation with correlated-noise matrix factorizations."""
