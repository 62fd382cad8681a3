"""
Configurações do chcontrol
Carrega parâmetros numéricos de variáveis de ambiente usando Pydantic Settings
"""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Configurações da aplicação carregadas do .env (todas com padrão)"""
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    artifact_version: str = "1.0.0"

    # Logging
    log_level: str = "INFO"
    log_file: str = "logs/chcontrol.log"

    # FFT
    fft_workers: int = 1

    # Regularidade de monitoramento (k > d/2)
    k_reg_d1: float = 1.0
    k_reg_d2: float = 2.0

    # Dinâmica (ETD)
    default_dt: float = 1e-3
    blowup_factor: float = 1e3
    growth_guard_factor: float = 10.0
    large_control_factor: float = 10.0
    large_control_steps: int = 200
    etd_contour_points: int = 32

    # Steering (Agrachev–Sarychev)
    steering_delta_start: float = 1e-2
    steering_halvings: int = 8
    steering_steps_per_phase: int = 200
    hold_burst_fraction: float = 0.01
    hold_max_resteers: int = 400

    # Controle nulo linear
    gramian_nodes: int = 64
    gramian_max_refinements: int = 8
    gramian_residual_tol: float = 1e-10
    gramian_cond_max: float = 1e14
    source_term_M: float = 0.1
    source_term_p: float = 3.0
    source_term_q: float = 1.2
    grid_floor: float = 1e-3
    samples_per_interval: int = 8
    sample_stiffness: float = 0.25
    weight_overflow: float = 1e12

    # Controle nulo não linear
    picard_max_iter: int = 20
    picard_tol: float = 1e-14
    radius_safety: float = 0.5
    radius_bisections: int = 12
    radius_ratio_max: float = 0.9
    radius_probe_max: float = 4.0

    # Sonda da desigualdade espectral
    probe_upsample: int = 4
    probe_samples: int = 200

    def k_reg_for(self, d: int) -> float:
        return self.k_reg_d1 if d == 1 else self.k_reg_d2


# Instância global de configurações
settings = Settings()
