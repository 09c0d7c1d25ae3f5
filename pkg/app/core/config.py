from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    PROJECT_NAME: str = "martnorm"
    VERSION: str = "1.0.0"
    API_V1_STR: str = "/api/v1"
    LOG_LEVEL: str = "INFO"

    # Enumeration caps
    MARTNORM_CAP: int = 1_000_000
    SELECTION_CAP: int = 4096

    # Tolerances
    PROB_TOLERANCE: float = 1e-12
    RENORMALIZE_TOLERANCE: float = 1e-9
    MARTINGALE_TOLERANCE: float = 1e-9
    CLASSIFY_TOLERANCE: float = 1e-10

    # DRBSDE solver
    BARRIER_INFINITY: float = 1e9
    PICARD_MAX_ITER: int = 100
    PICARD_TOL: float = 1e-12
    PICARD_THRESHOLD: float = 0.5
    PENALTY: float = 1e6

    # Doob-Meyer check: holds below the first, fails above the second
    MEYER_HOLDS_TOL: float = 1e-12
    MEYER_FAILS_TOL: float = 1e-9

    # Partition supremum
    NORM_STRATEGY: str = "finest"
    GREEDY_MAX_ROUNDS: int = 50

    # Ratio windows. Provable defaults; suite pilots tighten them.
    EQUIVALENCE_WINDOW_LOW: float = 0.02
    EQUIVALENCE_WINDOW_HIGH: float = 7.0
    MONOTONE_ENERGY_C: float = 71.0
    SOLUTION_ESTIMATE_HIGH: float = 100.0
    FAMILY_NORM_C: float = 17.0

    class Config:
        env_file = ".env"


settings = Settings()
