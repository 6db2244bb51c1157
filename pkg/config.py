import os


class Config:
    # Runtime settings; every value can be overridden from the environment.
    LOG_LEVEL = os.getenv('ASF_LOG_LEVEL', 'INFO')
    # 0 means "all available cores"
    THREADS = int(os.getenv('ASF_THREADS', '0'))
    CI_LEVEL = float(os.getenv('ASF_CI_LEVEL', '0.95'))
    TRIM_QUANTILES = (
        float(os.getenv('ASF_TRIM_LOW', '0.05')),
        float(os.getenv('ASF_TRIM_HIGH', '0.95')),
    )
    QUADRATURE_NODES = int(os.getenv('ASF_QUADRATURE_NODES', '32'))
    # share of evaluation points allowed to fail before an estimate errors
    MAX_FAILED_SHARE = 0.05
    # share of Monte Carlo replications allowed to fail before a run errors
    MAX_FAILED_REPLICATIONS = 0.02
    SCHEMA_VERSION = "1"
