"""환경변수 설정 - Pydantic Settings"""
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """애플리케이션 설정"""

    model_config = SettingsConfigDict(
        env_file=(".env.local",),
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Server
    port: int = 8000

    # Output
    output_dir: str = "runs"

    # Logging
    log_level: str = "info"

    # Quadrature
    # 조립은 2k+2, 하중은 2k+4, 진동항은 2m+10 차수 사용
    quadrature_max_degree: int = 60
    assembly_quadrature_excess: int = 2
    load_quadrature_excess: int = 4
    oscillation_quadrature_excess: int = 10
    error_quadrature_degree: int = 25
    singular_subdivision_levels: int = 4

    # Stabilization
    penalty_stabilization_factor: float = 10.0  # α = factor · k² · a / |F|
    lemma_gamma_factor: float = 2.0  # γ 미지정 시 threshold 배수

    # Adaptivity
    dorfler_theta: float = 0.5
    checkerboard_kappa: float = 100.0

    # Linear algebra
    singular_pivot_tol: float = 1e-13
    symmetry_tol: float = 1e-10
    solver_rtol: float = 1e-10
    cg_rtol: float = 1e-12
    cg_maxiter_factor: int = 20

    # Verification
    equilibration_warn_tol: float = 1e-7
    bubble_check_tol: float = 1e-12  # 단위 L² 노름 버블의 발산 / 법선 trace, 평가 크기 배율

    # Run store (HTTP API)
    run_cache_ttl: int = 1800
    run_cache_size: int = 100
    api_max_steps: int = 30
    api_max_dofs: int = 200_000


@lru_cache
def get_settings() -> Settings:
    """캐시된 설정 인스턴스 반환"""
    return Settings()
