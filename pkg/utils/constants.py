DENSE_THRESHOLD = 4096                       # largest N handled by dense eigendecompositions
KERNEL_TOL = 1e-10                           # |lambda| <= KERNEL_TOL * max(lambda) counts as kernel
LANCZOS_TOL = 1e-8                           # relative tolerance on the spectral gap above DENSE_THRESHOLD
CHEBYSHEV_TOL = 1e-6                         # accuracy budget of the iterative field sampler
CG_TOL = 1e-10                               # conjugate-gradient tolerance for Green columns
RETRY_FACTOR = 10                            # configuration-model attempts per vertex

DEFAULT_ALPHA = 0.3
DEFAULT_BETA = 0.05                           # random 3-regular graphs have gap close to 1 - 2*sqrt(2)/3
DEFAULT_K = 20.0                             # exploration cap K (|C| >= K ln N stops the exploration)
DEFAULT_C_KAPPA = 3.0                        # anomaly threshold M_n = c_kappa * sqrt(ln N)
DEFAULT_C1 = 4.0                             # measured constant in k_end <= c1 K s_n^2

LOG_OVERFLOW_GUARD = 700.0                   # log((1+delta)^|C|) beyond this is declared divergent
MAX_FRONTIER = 2_000_000                     # lazy cluster generation stops (saturated) beyond this width
ESTIMATOR_FRONTIER = 10_000                  # frontier cap used by the Monte Carlo estimators
REPLICA_CHUNK = 500                          # replicas per parallel task
BOOTSTRAP_RESAMPLES = 200

EPSILON_GRID = (0.1, 0.2, 0.5, 1.0)
LADDER = (2 ** 10, 2 ** 11, 2 ** 12, 2 ** 13)
DEFAULT_REPLICAS = 200

THREADS_ENV = 'GFFPERC_THREADS'

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2
