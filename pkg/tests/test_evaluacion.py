# test_evaluacion.py
"""
Pruebas de inferencia, volcados de tracks y lazo cerrado
"""

import numpy as np
import pytest

from evaluacion import closed_loop_rollout, ejecutar_episodio, evaluar_modelo, verdad_desde_episodio
from historial import cargar_volcado, guardar_volcado
from metricas import COLUMNAS_REPORTE
from modelo import ModeloDMAD
from conftest import configuracion_diminuta


def test_verdad_por_frame(cfg, episodio):
    verdad = verdad_desde_episodio(episodio, 2, pasos_futuros=3)
    assert len(verdad) == episodio.num_frames
    assert all(frame['episodio'] == 2 for frame in verdad)
    for frame in verdad:
        for objeto in frame['objetos']:
            assert len(objeto['caja']) == 7
            assert len(objeto['futuro']) <= min(3, episodio.num_frames - 1 - frame['frame'])
    assert all(o['futuro'] == [] for o in verdad[-1]['objetos'])


def test_volcado_de_episodio(cfg, episodio, tmp_path):
    volcado = ejecutar_episodio(ModeloDMAD(cfg), episodio, cfg)
    assert [frame['frame'] for frame in volcado] == list(range(episodio.num_frames))
    for frame in volcado:
        ids = [d['id'] for d in frame['detecciones']]
        assert len(ids) == len(set(ids))
        assert len(frame['plan']) == cfg['modelo']['t_plan']
        assert len(frame['mapa']) == cfg['modelo']['n_map']
    ruta = guardar_volcado(volcado, str(tmp_path / 'episodio.jsonl'))
    assert cargar_volcado(ruta) == cargar_volcado(ruta)
    assert len(cargar_volcado(ruta)) == episodio.num_frames


def test_evaluacion_reproducible(cfg, episodio):
    modelo = ModeloDMAD(cfg)
    _, a = evaluar_modelo(modelo, [episodio], cfg, 'h')
    _, b = evaluar_modelo(modelo, [episodio], cfg, 'h')
    assert list(a.a_fila()) == COLUMNAS_REPORTE
    assert a.a_dataframe().equals(b.a_dataframe())


@pytest.mark.parametrize("modo", ['bbox-difference', 'regress-from-mt', 'regress-from-obj'])
def test_volcado_con_cada_modo_de_velocidad(modo, episodio):
    cfg = configuracion_diminuta(ablacion={'velocity_mode': modo})
    volcado = ejecutar_episodio(ModeloDMAD(cfg), episodio, cfg)
    assert len(volcado) == episodio.num_frames


def test_lazo_cerrado_experto_determinista(cfg):
    a = closed_loop_rollout(None, [0, 1], 4, cfg)
    b = closed_loop_rollout(None, [0, 1], 4, cfg)
    assert a.a_dict() == b.a_dict()
    assert a.trayectorias == b.trayectorias
    assert a.pasos == 8
    assert all(len(camino) == 5 for camino in a.trayectorias)
    assert a.avance_medio >= 0.0


def test_lazo_cerrado_largo_termina_al_salir_de_la_via(cfg):
    resultado = closed_loop_rollout(None, range(8), 40, cfg)
    assert resultado.terminadas >= 1
    assert resultado.pasos == sum(len(camino) - 1 for camino in resultado.trayectorias)
    assert resultado.pasos < 8 * 40
    assert all(len(camino) <= 41 for camino in resultado.trayectorias)
    assert resultado.a_dict()['terminadas'] == resultado.terminadas


def test_lazo_cerrado_con_horizonte_cero(cfg):
    resultado = closed_loop_rollout(None, [0, 1], 0, cfg)
    assert resultado.pasos == 0
    assert resultado.tasa_colision is None
    assert resultado.avance_medio is None


def test_lazo_cerrado_con_modelo(cfg):
    resultado = closed_loop_rollout(ModeloDMAD(cfg), [3], 2, cfg)
    assert resultado.pasos == 2
    assert 0.0 <= resultado.tasa_colision <= 100.0
    assert np.asarray(resultado.trayectorias[0]).shape == (3, 2)
