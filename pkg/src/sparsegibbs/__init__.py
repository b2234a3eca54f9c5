"""Random sparse sampling of Gibbs capacities on dyadic trees."""
from .words import DyadicWord
from .gibbs_model import (GibbsModel, BernoulliWeights, MarkovWeights, Homogeneous, ModelError,
                          ModelFileError, mu_log2, mu_log2_codes, quasi_bernoulli_log2C, tau_mu,
                          tau_mu_prime, tau_star, endpoints, parse_model, load_model, format_model)

__version__ = "0.1.0"
