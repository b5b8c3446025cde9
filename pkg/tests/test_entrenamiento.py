# test_entrenamiento.py
"""
Pruebas de emparejamiento, perdidas y del programador de dos etapas
"""

import itertools
import os

import numpy as np
import pytest

import autograd as ag
from config import ErrorConfiguracion, ErrorEntrenamiento, queue_por_etapa
from decodificador_movimiento import PrediccionMultimodal
from decodificador_semantico import MARGEN_REFERENCIA
from entrenamiento import (AblationFlags, ResultadoEmparejamiento, StageConfig, auditar_gradientes,
                           hungarian_match, loss_multimodal, loss_planning, matriz_costos, paso_muestra,
                           sequential_wiring, train_two_stage, verificar_division)
from modelo import ModeloDMAD, orden_esperado
from rastreador import ConjuntoRastreo, PoliticaPropagacion, actualizar_rastreo, propagate, select_positives


def _costo_minimo_por_fuerza_bruta(costos):
    n, m = costos.shape
    mejor = np.inf
    if n >= m:
        for filas in itertools.permutations(range(n), m):
            mejor = min(mejor, sum(costos[f, c] for c, f in enumerate(filas)))
    else:
        for columnas in itertools.permutations(range(m), n):
            mejor = min(mejor, sum(costos[f, c] for f, c in enumerate(columnas)))
    return mejor


@pytest.mark.parametrize("semilla", range(100))
def test_hungaro_coincide_con_fuerza_bruta(semilla):
    # las 49 formas con n, m <= 7 aparecen al menos dos veces
    rng = np.random.default_rng(semilla)
    n, m = 1 + semilla % 7, 1 + (semilla // 7) % 7
    costos = rng.uniform(0.0, 10.0, size=(n, m))
    resultado = hungarian_match(None, None, [0] * m, None, list(range(100, 100 + m)), costos=costos)
    assert resultado.costo == pytest.approx(_costo_minimo_por_fuerza_bruta(costos))
    assert len(resultado.pares) == min(n, m)
    assert len(resultado.consultas_libres) == n - min(n, m)
    assert len(resultado.gts_libres) == m - min(n, m)


def test_pares_infactibles_quedan_sin_emparejar():
    costos = np.array([[1.0, np.inf], [np.inf, np.inf]])
    resultado = hungarian_match(None, None, [0, 0], None, [7, 8], costos=costos)
    assert resultado.pares == [(0, 7)]
    assert resultado.consultas_libres == [1]
    assert resultado.gts_libres == [8]


def test_consultas_propagadas_se_preasignan_a_su_objeto():
    costos = np.array([[5.0, 0.0], [0.0, 5.0]])
    resultado = hungarian_match(None, None, [0, 0], None, [7, 8], ids_verdad_consultas=[7, -1], costos=costos)
    assert resultado.pares == [(0, 7), (1, 8)]
    assert resultado.costo == pytest.approx(10.0)
    assert resultado.id_verdad_por_consulta(3).tolist() == [7, 8, -1]


def test_preasignacion_a_objeto_desaparecido_se_ignora():
    costos = np.array([[5.0, 0.0], [0.0, 5.0]])
    resultado = hungarian_match(None, None, [0, 0], None, [7, 8], ids_verdad_consultas=[3, -1], costos=costos)
    assert resultado.pares == [(0, 8), (1, 7)]


def test_matriz_de_costos_clase_y_centro():
    probabilidades = np.array([[0.7, 0.2, 0.1]])
    costos = matriz_costos(probabilidades, [[1.0, 2.0, 0.0]], [1], [[2.0, 0.0, 0.0]], 2.0, 0.25)
    assert costos[0, 0] == pytest.approx(2.0 * 0.8 + 0.25 * 3.0)
    assert matriz_costos(probabilidades, [[0.0, 0.0, 0.0]], [], np.zeros((0, 3))).shape == (1, 0)


def test_perdida_de_plan_nula_para_el_plan_experto_sin_obstaculos():
    experto = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    plan = ag.Tensor(experto.copy(), requires_grad=True)
    assert float(loss_planning(plan, experto, [None, np.zeros((0, 2)), None]).data) == 0.0


def test_perdida_de_plan_penaliza_objetos_dentro_del_radio():
    experto = np.array([[1.0, 0.0], [2.0, 0.0]])
    plan = ag.Tensor(experto.copy(), requires_grad=True)
    perdida = loss_planning(plan, experto, [np.array([[1.2, 0.0]]), np.array([[9.0, 9.0]])], radio_seguridad=0.5)
    assert float(perdida.data) == pytest.approx((0.5 - 0.2) / 2.0, abs=1e-6)


def test_perdida_multimodal_solo_entrena_el_mejor_modo():
    verdad = {5: {t: (np.array([float(t), 0.0]), np.zeros(2)) for t in range(0, 4)}}
    cerca = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    trayectorias = ag.Tensor(np.stack([cerca + 0.1, cerca + 3.0])[None], requires_grad=True)
    log_conf = ag.Tensor(np.log(np.array([[0.5, 0.5]])), requires_grad=True)
    emparejamiento = ResultadoEmparejamiento([(0, 5)], [], [], 0.0)
    perdida = loss_multimodal(PrediccionMultimodal(trayectorias, log_conf), emparejamiento, verdad, 0)
    ag.backward(perdida, [trayectorias, log_conf])
    assert np.any(trayectorias.grad[0, 0])
    assert not np.any(trayectorias.grad[0, 1])
    assert log_conf.grad[0, 0] < 0.0
    assert float(perdida.data) == pytest.approx(0.1 * 2 + np.log(2.0))


def test_configuracion_de_etapas(cfg):
    etapa1 = StageConfig.desde_configuracion(cfg, 1)
    assert etapa1.perdidas_activas == ('deteccion', 'mapa', 'unimodal')
    assert etapa1.queue_length == 2
    assert etapa1.semilla == cfg['entrenamiento']['semilla'] + 1
    assert 'planificacion' in StageConfig.desde_configuracion(cfg, 2).perdidas_activas
    with pytest.raises(ErrorConfiguracion):
        StageConfig(3, 1, 1, 1e-3, 0)
    cfg['entrenamiento']['queue_length_stage2'] = 4
    assert queue_por_etapa(cfg, 2) == 4


def test_interruptores_de_ablacion_reemplazan_la_seccion(cfg):
    banderas = AblationFlags.desde_configuracion(cfg)
    banderas.velocity_mode = 'bbox-difference'
    nueva = banderas.aplicar(cfg)
    assert nueva['ablacion']['velocity_mode'] == 'bbox-difference'
    assert cfg['ablacion']['velocity_mode'] == 'derive-from-unimodal'


def test_cableado_secuencial(cfg):
    modelo = sequential_wiring(cfg)
    assert modelo.arquitectura == 'sequential'
    assert modelo.movimiento is None
    assert modelo.cableado_velocidad.modo == 'regress-from-obj'
    cfg['ablacion']['interactions'] = {'obj_map': True, 'obj_mt': True, 'mt_map': False}
    with pytest.raises(ErrorConfiguracion):
        sequential_wiring(cfg)


def test_paso_de_muestra_registra_el_orden_de_filtro(cfg, episodio):
    modelo = ModeloDMAD(cfg)
    total, terminos, ordenes = paso_muestra(modelo, episodio, 0, 2, ('deteccion', 'mapa', 'unimodal'), cfg)
    assert set(terminos) == {'deteccion', 'mapa', 'unimodal'}
    assert np.isfinite(total.data)
    assert ordenes == [orden_esperado(cfg['modelo']['capas'], 'divided')] * 2


def test_muestra_fuera_del_episodio_lanza_error(cfg, episodio):
    with pytest.raises(ErrorEntrenamiento):
        paso_muestra(ModeloDMAD(cfg), episodio, episodio.num_frames - 1, 2, ('deteccion',), cfg)


def test_referencia_propagada_es_el_primer_paso_unimodal(cfg, episodio):
    modelo = ModeloDMAD(cfg)
    politica = PoliticaPropagacion('inference', tau=0.01)
    conjunto = ConjuntoRastreo()
    consultas = propagate(conjunto, *modelo.consultas_frescas(), *modelo.normas_propagacion())
    salida = modelo.procesar_frame(episodio.tokens[0], consultas, episodio.frames[0].ego.posicion)
    confianzas = salida.final.cajas.confianza
    positivos = select_positives(confianzas, 'inference', tau=politica.tau)
    ids = actualizar_rastreo(conjunto, consultas, positivos, salida.final.q_obj, salida.q_mt,
                             salida.referencias_siguientes(), confianzas, politica)
    siguientes = propagate(conjunto, *modelo.consultas_frescas(), *modelo.normas_propagacion())
    orden = np.argsort(ids[ids >= 0])
    esperadas = salida.referencias_siguientes()[np.flatnonzero(ids >= 0)][orden]
    assert np.array_equal(siguientes.ref.data[:len(orden)], esperadas)
    np.testing.assert_array_equal(esperadas[:, :2], salida.unimodal.punto(1).data[np.flatnonzero(ids >= 0)][orden])


def test_referencias_propagadas_se_recortan_al_mundo(cfg, episodio):
    modelo = ModeloDMAD(cfg)
    modelo.cabezas.unimodal.anular()
    modelo.cabezas.unimodal.capas[-1].sesgo.data[...] = 50.0
    politica = PoliticaPropagacion('inference', tau=0.01)
    conjunto = ConjuntoRastreo()
    consultas = propagate(conjunto, *modelo.consultas_frescas(), *modelo.normas_propagacion())
    salida = modelo.procesar_frame(episodio.tokens[0], consultas, episodio.frames[0].ego.posicion)
    confianzas = salida.final.cajas.confianza
    positivos = select_positives(confianzas, 'inference', tau=politica.tau)
    actualizar_rastreo(conjunto, consultas, positivos, salida.final.q_obj, salida.q_mt,
                       salida.referencias_siguientes(), confianzas, politica)
    siguientes = propagate(conjunto, *modelo.consultas_frescas(), *modelo.normas_propagacion())
    limite = cfg['mundo']['radio'] + MARGEN_REFERENCIA
    assert siguientes.propagadas > 0
    assert np.max(np.abs(siguientes.ref.data)) <= limite
    assert np.max(np.abs(salida.unimodal.punto(1).data)) > limite


@pytest.mark.lento
def test_auditoria_de_gradientes_dividida_sin_flujo_cruzado(cfg, episodio):
    normas = auditar_gradientes(ModeloDMAD(cfg), episodio, 0, 2, cfg)
    division = verificar_division(normas, 'divided')
    assert division['semantico<-movimiento'] == 0.0
    assert division['movimiento<-semantico'] == 0.0
    assert normas['unimodal']['decodificador_movimiento'] > 0.0
    assert normas['deteccion']['decodificador_semantico'] > 0.0


@pytest.mark.lento
def test_auditoria_de_gradientes_secuencial_con_flujo_hacia_semantica(cfg_secuencial, episodio):
    normas = auditar_gradientes(ModeloDMAD(cfg_secuencial), episodio, 0, 2, cfg_secuencial)
    division = verificar_division(normas, 'sequential')
    assert division['semantico<-movimiento'] > 0.0


def test_etapa_2_sin_checkpoint_lanza_error(cfg, episodio, tmp_path):
    with pytest.raises(ErrorEntrenamiento):
        train_two_stage(cfg, [episodio], str(tmp_path), etapas=(2,))


@pytest.mark.lento
def test_dos_etapas_congela_las_cabezas_de_etapa_2_en_la_etapa_1(cfg, episodio, tmp_path):
    iniciales = {nombre: t.data.copy() for nombre, t in ModeloDMAD(cfg).parametros_nombrados()}
    rutas = train_two_stage(cfg, [episodio], str(tmp_path))
    assert os.path.exists(f"{rutas[1]}.json") and os.path.exists(f"{rutas[2]}.json")

    etapa1 = ModeloDMAD(cfg)
    etapa1.cargar(rutas[1])
    etapa2 = ModeloDMAD(cfg)
    etapa2.cargar(rutas[2])
    p1 = dict(etapa1.parametros_nombrados())
    p2 = dict(etapa2.parametros_nombrados())
    assert np.array_equal(p1['cabezas.plan.capa0.peso'].data, iniciales['cabezas.plan.capa0.peso'])
    assert not np.array_equal(p1['semantico.cabeza_cajas.capa0.peso'].data,
                              iniciales['semantico.cabeza_cajas.capa0.peso'])
    assert not np.array_equal(p2['cabezas.plan.capa0.peso'].data, p1['cabezas.plan.capa0.peso'].data)


@pytest.mark.lento
def test_reentrenar_con_la_misma_semilla_da_checkpoints_identicos(cfg, episodio, tmp_path):
    binarios = []
    for corrida in ('a', 'b'):
        rutas = train_two_stage(cfg, [episodio], str(tmp_path / corrida))
        with open(f"{rutas[2]}.bin", 'rb') as archivo:
            binarios.append(archivo.read())
    assert binarios[0] == binarios[1]
