# conftest.py
"""
Fixtures compartidos: configuracion diminuta y episodios pequenos
"""

import numpy as np
import pytest

import autograd as ag
from config import construir_configuracion
from simulador import gen_episode

CAMBIOS_DIMINUTOS = {
    'modelo': {
        'd': 8, 'd_mt': 8, 'cabezas': 2, 'capas': 2, 'n_obj': 4, 'n_map': 2,
        'k_modos': 2, 't_pasado': 2, 't_fut_multi': 4, 't_plan': 6, 'vertices_mapa': 10,
    },
    'mundo': {'rejilla': 4, 'frames': 4, 'objetos_min': 1, 'objetos_max': 3, 'polilineas': 3},
    'entrenamiento': {'pasos_stage1': 2, 'pasos_stage2': 2},
    'ablacion': {'queue_length': 2, 'unimodal_horizon_s': 1.0},
    'evaluacion': {'permutaciones': 2},
}


def configuracion_diminuta(**secciones):
    """Configuracion diminuta con cambios adicionales por seccion"""
    cambios = {clave: dict(valor) for clave, valor in CAMBIOS_DIMINUTOS.items()}
    for seccion, valores in secciones.items():
        cambios.setdefault(seccion, {}).update(valores)
    return construir_configuracion(cambios)


@pytest.fixture(autouse=True)
def cinta_limpia():
    ag.nueva_cinta()
    yield
    ag.nueva_cinta()


@pytest.fixture
def cfg():
    return configuracion_diminuta()


@pytest.fixture
def cfg_secuencial():
    return configuracion_diminuta(ablacion={
        'architecture': 'sequential',
        'interactions': {'obj_map': True, 'obj_mt': False, 'mt_map': False},
        'velocity_mode': 'regress-from-obj',
    })


@pytest.fixture
def episodio(cfg):
    return gen_episode(3, cfg['mundo'])


@pytest.fixture
def rng():
    return np.random.default_rng(0)
