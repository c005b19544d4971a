import os
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("MCMC_LOG_LEVEL", "INFO")

# Size caps for exhaustive finite-state work
MAX_HYPERCUBE_DIM = int(os.getenv("MCMC_MAX_HYPERCUBE_DIM", "20"))
MAX_CONDUCTANCE_STATES = int(os.getenv("MCMC_MAX_CONDUCTANCE_STATES", "25"))
MAX_DENSE_STATES = int(os.getenv("MCMC_MAX_DENSE_STATES", "4096"))

# Replication harness
SIGMA_THRESHOLD = float(os.getenv("MCMC_SIGMA_THRESHOLD", "3.0"))
DEFAULT_REPLICATIONS = int(os.getenv("MCMC_DEFAULT_REPLICATIONS", "1000"))
CHUNK_SIZE = int(os.getenv("MCMC_CHUNK_SIZE", "1024"))
DEFAULT_THREADS = int(os.getenv("MCMC_THREADS", "1"))

# Numerical knobs
CHORD_EPS_REL = float(os.getenv("MCMC_CHORD_EPS_REL", "1e-9"))
BURNIN_SCAN_POINTS = int(os.getenv("MCMC_BURNIN_SCAN_POINTS", "1024"))
MAX_DOUBLINGS = int(os.getenv("MCMC_MAX_DOUBLINGS", "20"))
