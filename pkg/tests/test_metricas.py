# test_metricas.py
"""
Pruebas de las metricas de deteccion, rastreo, mapa, prediccion y planificacion
"""

import numpy as np
import pytest

from config import ErrorMetrica
from evaluacion import verdad_desde_episodio
from metricas import (COLUMNAS_REPORTE, ReporteMetricas, colision_plan, construir_reporte, detection_metrics,
                      distancia_chamfer, planning_metrics, precision_promedio, prediction_metrics,
                      tracking_metrics)


def _objeto(id_instancia, x, y=0.0, categoria='vehicle', futuro=(), velocidad=(0.0, 0.0)):
    return {'id': id_instancia, 'categoria': categoria, 'caja': [x, y, 0.0, 1.8, 1.6, 4.5, 0.0],
            'velocidad': list(velocidad), 'futuro': [list(p) for p in futuro]}


def _deteccion(id_instancia, x, y=0.0, categoria='vehicle', confianza=0.9, futuro=None, velocidad=None):
    return {'id': id_instancia, 'categoria': categoria, 'caja': [x, y, 0.0, 1.8, 1.6, 4.5, 0.0],
            'confianza': confianza, 'velocidad': velocidad, 'unimodal': None,
            'futuro_unimodal': None if futuro is None else [list(p) for p in futuro],
            'multimodal': None, 'confianzas_modos': None}


def _frame_verdad(t, objetos, plan_experto=None, episodio=0):
    return {'episodio': episodio, 'frame': t, 'objetos': objetos, 'mapa': [], 'plan_experto': plan_experto,
            'ego': {'posicion': [0.0, 0.0], 'rumbo': 0.0}}


def _frame_pred(t, detecciones, plan=None, episodio=0):
    return {'episodio': episodio, 'frame': t, 'detecciones': detecciones, 'mapa': [], 'plan': plan}


def _verdad_como_prediccion(verdad):
    predicciones = []
    for frame in verdad:
        detecciones = [_deteccion(o['id'], *o['caja'][:2], categoria=o['categoria'], confianza=1.0,
                                  futuro=o['futuro'], velocidad=o['velocidad']) for o in frame['objetos']]
        prediccion = _frame_pred(frame['frame'], detecciones, frame['plan_experto'], frame['episodio'])
        prediccion['mapa'] = [dict(p, confianza=1.0) for p in frame['mapa']]
        predicciones.append(prediccion)
    return predicciones


def test_verdad_como_prediccion_calibra_las_metricas(cfg, episodio):
    verdad = verdad_desde_episodio(episodio, 0, cfg['modelo']['t_fut_multi'])
    reporte = construir_reporte(_verdad_como_prediccion(verdad), verdad, cfg, 'abc')
    assert reporte['mAP'] == 1.0
    assert reporte['MOTA'] == 1.0
    assert reporte['IDS'] == 0
    assert reporte['map_AP'] == 1.0
    assert reporte['EPA'] == 1.0
    assert reporte['minADE'] == 0.0
    assert reporte['mAVE'] == 0.0
    assert reporte['L2_1s'] == 0.0 and reporte['L2_3s'] == 0.0


def test_precision_promedio_en_101_puntos():
    assert precision_promedio([1, 0], [0.9, 0.8], 1) == pytest.approx(1.0)
    assert precision_promedio([0, 1], [0.9, 0.8], 1) == pytest.approx(0.5)
    assert precision_promedio([], [], 3) == 0.0
    with pytest.raises(ErrorMetrica):
        precision_promedio([1], [0.5], 0)


def test_ap_no_decrece_con_el_umbral_de_distancia():
    verdad = [_frame_verdad(0, [_objeto(1, 0.0)])]
    predicciones = [_frame_pred(0, [_deteccion(5, 1.5)])]
    resultado = detection_metrics(predicciones, verdad, umbrales=(0.5, 1.0, 2.0, 4.0))
    aps = [resultado['ap'][('vehicle', u)] for u in (0.5, 1.0, 2.0, 4.0)]
    assert aps == sorted(aps)
    assert resultado['mAP'] == pytest.approx(0.5)


def test_mave_en_verdaderos_positivos():
    verdad = [_frame_verdad(0, [_objeto(1, 0.0, velocidad=(3.0, 0.0))])]
    predicciones = [_frame_pred(0, [_deteccion(1, 0.5, velocidad=[3.0, 4.0])])]
    assert detection_metrics(predicciones, verdad)['mAVE'] == pytest.approx(4.0)


def test_sin_verdad_las_metricas_de_deteccion_son_nulas():
    resultado = detection_metrics([_frame_pred(0, [_deteccion(1, 0.0)])], [_frame_verdad(0, [])])
    assert resultado['mAP'] is None


def _secuencia_rastreo(intercambio_en=None, frames=6):
    verdad, predicciones = [], []
    for t in range(frames):
        verdad.append(_frame_verdad(t, [_objeto(10, 0.0), _objeto(20, 20.0)]))
        ids = (1, 2) if intercambio_en is None or t < intercambio_en else (2, 1)
        predicciones.append(_frame_pred(t, [_deteccion(ids[0], 0.0), _deteccion(ids[1], 20.0)]))
    return predicciones, verdad


def test_tracks_estables_dan_mota_uno_sin_cambios_de_id():
    assert tracking_metrics(*_secuencia_rastreo()) == {'MOTA': 1.0, 'IDS': 0}


def test_un_intercambio_de_ids_cuenta_dos_cambios():
    resultado = tracking_metrics(*_secuencia_rastreo(intercambio_en=3))
    assert resultado['IDS'] == 2
    assert resultado['MOTA'] == pytest.approx(1.0 - 2.0 / 12.0)


def test_ids_de_distintos_episodios_no_se_confunden():
    a_pred, a_verdad = _secuencia_rastreo(frames=2)
    b_pred, b_verdad = _secuencia_rastreo(frames=2)
    for frame in b_pred + b_verdad:
        frame['episodio'] = 1
    assert tracking_metrics(a_pred + b_pred, a_verdad + b_verdad)['IDS'] == 0


def test_chamfer_de_polilineas():
    linea = np.column_stack([np.arange(5.0), np.zeros(5)])
    assert distancia_chamfer(linea, linea) == 0.0
    assert distancia_chamfer(linea, linea + [0.0, 1.0]) == pytest.approx(1.0)


def test_epa_con_un_acierto_y_un_falso_positivo():
    futuro = [[1.0, 0.0], [2.0, 0.0]]
    verdad = [_frame_verdad(0, [_objeto(1, 0.0, futuro=futuro), _objeto(2, 30.0, futuro=futuro)])]
    predicciones = [_frame_pred(0, [_deteccion(1, 0.0, futuro=futuro), _deteccion(9, -30.0, futuro=futuro)])]
    assert prediction_metrics(predicciones, verdad, alfa=0.5)['EPA'] == pytest.approx(0.25)
    assert prediction_metrics(predicciones, verdad, alfa=0.0)['EPA'] == pytest.approx(0.5)
    assert prediction_metrics(predicciones, verdad)['minADE'] == 0.0


def test_epa_sin_predicciones_es_cero():
    verdad = [_frame_verdad(0, [_objeto(1, 0.0, futuro=[[1.0, 0.0]])])]
    resultado = prediction_metrics([_frame_pred(0, [])], verdad)
    assert resultado['EPA'] == 0.0
    assert resultado['minADE'] is None


def test_min_ade_toma_el_mejor_modo():
    futuro = [[1.0, 0.0], [2.0, 0.0]]
    deteccion = _deteccion(1, 0.0)
    deteccion['multimodal'] = [[[1.0, 1.0], [2.0, 1.0]], [[1.0, 0.5], [2.0, 0.5]]]
    verdad = [_frame_verdad(0, [_objeto(1, 0.0, futuro=futuro)])]
    resultado = prediction_metrics([_frame_pred(0, [deteccion])], verdad)
    assert resultado['minADE'] == pytest.approx(0.5)
    assert resultado['minFDE'] == pytest.approx(0.5)


def _plan_recto(velocidad, pasos=6, dt=0.5):
    return [[velocidad * dt * k, 0.0] for k in range(1, pasos + 1)]


def test_plan_detenido_frente_a_experto_a_5_m_s():
    verdad = [_frame_verdad(0, [], plan_experto=_plan_recto(5.0))]
    predicciones = [_frame_pred(0, [], plan=[[0.0, 0.0]] * 6)]
    resultado = planning_metrics(predicciones, verdad)
    assert resultado['L2_1s'] == pytest.approx(5.0)
    assert resultado['L2_2s'] == pytest.approx(10.0)
    assert resultado['L2_3s'] == pytest.approx(15.0)
    assert resultado['l2_avg'] == pytest.approx(10.0)
    assert resultado['collision_avg'] == 0.0


def test_plan_igual_al_experto_tiene_l2_cero():
    plan = _plan_recto(5.0)
    resultado = planning_metrics([_frame_pred(0, [], plan=plan)], [_frame_verdad(0, [], plan_experto=plan)])
    assert resultado['L2_1s'] == 0.0 and resultado['l2_avg'] == 0.0


def test_colision_del_plan_con_objetos_futuros():
    plan = _plan_recto(5.0)
    verdad = [_frame_verdad(0, [], plan_experto=plan)]
    verdad += [_frame_verdad(t, [_objeto(3, 7.5)]) for t in range(1, 7)]
    predicciones = [_frame_pred(0, [], plan=plan)] + [_frame_pred(t, []) for t in range(1, 7)]
    resultado = planning_metrics(predicciones, verdad)
    assert resultado['colision_3s'] == 100.0

    lejos = [verdad[0]] + [_frame_verdad(t, [_objeto(3, 7.5, y=10.0)]) for t in range(1, 7)]
    assert planning_metrics(predicciones, lejos)['collision_avg'] == 0.0


def test_colision_solo_cuenta_pasos_del_horizonte():
    plan = np.array(_plan_recto(5.0))
    futuros = [None] * 5 + [[_objeto(3, 15.0)['caja']]]
    assert not colision_plan(plan, [0.0, 0.0], 0.0, futuros, 2)
    assert colision_plan(plan, [0.0, 0.0], 0.0, futuros, 6)


def test_plan_corto_lanza_error():
    with pytest.raises(ErrorMetrica):
        planning_metrics([_frame_pred(0, [], plan=[[1.0, 0.0]] * 4)],
                         [_frame_verdad(0, [], plan_experto=_plan_recto(5.0))])


def test_reporte_csv_con_esquema_fijo(tmp_path):
    reporte = ReporteMetricas({'mAP': 0.5, 'IDS': 3}, 'abc')
    ruta = reporte.guardar_csv(str(tmp_path / 'metricas.csv'))
    leido = ReporteMetricas.desde_csv(ruta)
    assert list(leido.a_fila()) == COLUMNAS_REPORTE
    assert leido['mAP'] == pytest.approx(0.5)
    assert leido['EPA'] is None
    assert leido['hash'] == 'abc'


def test_reporte_identico_en_dos_evaluaciones(cfg, episodio, tmp_path):
    verdad = verdad_desde_episodio(episodio, 0, cfg['modelo']['t_fut_multi'])
    predicciones = _verdad_como_prediccion(verdad)
    a = construir_reporte(predicciones, verdad, cfg).guardar_csv(str(tmp_path / 'a.csv'))
    b = construir_reporte(predicciones, verdad, cfg).guardar_csv(str(tmp_path / 'b.csv'))
    assert open(a, 'rb').read() == open(b, 'rb').read()
