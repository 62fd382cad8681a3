"""
Logging do chcontrol

Todos os módulos usam filhos do logger "chcontrol"; os handlers ficam só no pai:
arquivo JSON (DEBUG), console legível (INFO) e arquivo texto ao lado do JSON.
"""
import logging
import sys
from pathlib import Path
from pythonjsonlogger import jsonlogger

from .settings import settings

ROOT_NAME = "chcontrol"

PLAIN_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def _configure_root(log_file: str, level: str) -> logging.Logger:
    root = logging.getLogger(ROOT_NAME)
    root.setLevel(getattr(logging, level.upper()))
    if root.handlers:
        return root

    log_path = Path(log_file)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    # Cada registro JSON leva a versão dos artefatos, para cruzar logs e manifestos
    json_formatter = jsonlogger.JsonFormatter(
        '%(asctime)s %(name)s %(levelname)s %(funcName)s %(message)s',
        datefmt=DATE_FORMAT,
        static_fields={"artifact_version": settings.artifact_version},
    )
    plain_formatter = logging.Formatter(PLAIN_FORMAT, datefmt=DATE_FORMAT)

    json_handler = logging.FileHandler(log_path, encoding='utf-8')
    json_handler.setLevel(logging.DEBUG)
    json_handler.setFormatter(json_formatter)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(plain_formatter)

    plain_handler = logging.FileHandler(log_path.with_name(log_path.stem + "_plain.log"), encoding='utf-8')
    plain_handler.setLevel(logging.DEBUG)
    plain_handler.setFormatter(plain_formatter)

    for handler in (json_handler, console_handler, plain_handler):
        root.addHandler(handler)
    root.propagate = False
    return root


def setup_logger(name: str, log_file: str | None = None, level: str | None = None) -> logging.Logger:
    """
    Retorna o logger do módulo, pendurado em "chcontrol"

    Args:
        name: Nome do módulo (normalmente __name__)
        log_file: Arquivo JSON (padrão: settings.log_file); só vale na primeira chamada
        level: Nível (padrão: settings.log_level)
    """
    _configure_root(log_file or settings.log_file, level or settings.log_level)
    if name == ROOT_NAME or name.startswith(ROOT_NAME + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_NAME}.{name}")


# Logger principal da aplicação
app_logger = setup_logger(ROOT_NAME)
