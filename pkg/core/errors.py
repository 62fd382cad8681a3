"""
Hierarquia de exceções do chcontrol
"""
from typing import Any, Optional, Sequence


class ChControlError(Exception):
    """Raiz de todos os erros do projeto."""


# --- Falhas numéricas (CLI: código 4) ---

class NumericalFailure(ChControlError):
    pass


class ProductOverflow(NumericalFailure):
    """Valores não finitos ao calcular o produto pontual."""


class BlowupDetected(NumericalFailure):
    def __init__(self, blowup_time: float, trajectory: Any = None):
        super().__init__(f"norma excedeu o limiar em t={blowup_time:.6g}")
        self.blowup_time = blowup_time
        self.trajectory = trajectory


class StepSizeTooLarge(NumericalFailure):
    def __init__(self, time: float, factor: float):
        super().__init__(f"passo em t={time:.6g} multiplicou a norma por {factor:.3g}")
        self.time = time
        self.factor = factor


class GramianIllConditioned(NumericalFailure):
    def __init__(self, condition_number: float):
        super().__init__(f"gramiano mal condicionado (cond={condition_number:.3e})")
        self.condition_number = condition_number


class WeightOverflow(NumericalFailure):
    def __init__(self, quotient: float):
        super().__init__(f"quociente ponderado {quotient:.3e} acima do limite (M pequeno demais?)")
        self.quotient = quotient


class NoContraction(NumericalFailure):
    def __init__(self, ratios: Sequence[float], message: Optional[str] = None):
        super().__init__(message or f"iteração de Picard não contrai (razões={list(ratios)})")
        self.ratios = list(ratios)


# --- Erros de domínio ---

class DomainError(ChControlError):
    pass


class EmptyMask(DomainError):
    def __init__(self):
        super().__init__("máscara não seleciona nenhum nó")


class GridTooCoarse(DomainError):
    def __init__(self, frequency: int, n: int):
        super().__init__(f"frequência {frequency} fora da banda da malha n={n}")
        self.frequency = frequency
        self.n = n


class TruncationTooLossy(DomainError):
    def __init__(self, tail_norm: float, tol: float):
        super().__init__(f"cauda descartada {tail_norm:.3e} excede tol={tol:.3e}")
        self.tail_norm = tail_norm
        self.tol = tol


class AtHorizon(DomainError):
    def __init__(self, t: float, T: float):
        super().__init__(f"pesos indefinidos em t={t} >= T={T} (use o limite 0)")
        self.t = t
        self.T = T


# --- Falhas de controle (CLI: código 4) ---

class ControlFailure(ChControlError):
    pass


class BudgetExhausted(ControlFailure):
    def __init__(self, best_report: Any):
        err = getattr(best_report, "achieved_error", float("nan"))
        super().__init__(f"orçamento de tentativas esgotado (melhor erro={err:.3e})")
        self.best_report = best_report


class SteeringFailed(ControlFailure):
    def __init__(self, error: float, radius: float):
        super().__init__(f"estágio de steering terminou a {error:.3e} > raio {radius:.3e}")
        self.error = error
        self.radius = radius


# --- Configuração (CLI: código 2) ---

class ConfigInvalid(ChControlError):
    def __init__(self, errors: Sequence[str]):
        super().__init__("configuração inválida:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = list(errors)
