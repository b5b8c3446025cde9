# test_decodificadores.py
"""
Pruebas de los decodificadores semantico y de movimiento y del modelo completo
"""

import numpy as np
import pytest

import autograd as ag
from capas import MLP
from config import ErrorConfiguracion, ErrorForma, ErrorMetrica
from decodificador_movimiento import (DecodificadorMovimiento, TrayectoriaUnimodal, conteo_pila_movimiento,
                                      plan_ego, predict_unimodal, velocidad_por_diferencia, velocity_from_trajectory)
from decodificador_semantico import (CANALES_CAJA, DecodificadorSemantico, decode_boxes, exportar_referencia,
                                     interactive_layer, run_semantic_decoder)
from modelo import ModeloDMAD, orden_esperado
from rastreador import ConjuntoRastreo, propagate


def _entradas_semanticas(cfg, rng, episodio):
    decodificador = DecodificadorSemantico(cfg['modelo'], cfg['mundo']['radio'], np.random.default_rng(4))
    tokens = episodio.tokens[0]
    z = ag.Tensor(rng.normal(size=(tokens.centros.shape[0], cfg['modelo']['d'])))
    return decodificador, z, tokens.centros


def test_cabeza_de_cajas_anulada_produce_valores_neutros(rng):
    cabeza = MLP([4, 4, CANALES_CAJA], rng)
    cabeza.anular()
    ref = ag.Tensor(rng.normal(size=(3, 3)))
    cajas = decode_boxes(cabeza, ag.Tensor(rng.normal(size=(3, 4))), ref)
    assert np.array_equal(cajas.centro.data, ref.data)
    np.testing.assert_allclose(cajas.tamanos.data, np.ones((3, 3)))
    np.testing.assert_allclose(cajas.confianza, np.full(3, 2.0 / 3.0))
    assert cajas.velocidad is None


def test_cabeza_de_cajas_con_ancho_erroneo_lanza_error(rng):
    cabeza = MLP([4, 4, CANALES_CAJA + 1], rng)
    with pytest.raises(ErrorForma):
        decode_boxes(cabeza, ag.Tensor(rng.normal(size=(2, 4))), ag.Tensor(np.zeros((2, 3))))


def test_canales_de_velocidad_se_leen_al_final(rng):
    cabeza = MLP([4, 4, CANALES_CAJA + 2], rng)
    cabeza.capas[-1].anular()
    cabeza.capas[-1].sesgo.data[CANALES_CAJA:] = [1.5, -2.0]
    cajas = decode_boxes(cabeza, ag.Tensor(rng.normal(size=(2, 4))), ag.Tensor(np.zeros((2, 3))),
                         con_velocidad=True)
    np.testing.assert_allclose(cajas.velocidad.data, [[1.5, -2.0], [1.5, -2.0]])


def test_referencia_exportada_sin_gradiente_y_recortada():
    centro = ag.Tensor(np.array([[70.0, -5.0, 0.0], [1.0, 2.0, 0.5]]), requires_grad=True)
    exportada = exportar_referencia(centro, 50.0)
    assert not exportada.requires_grad
    np.testing.assert_allclose(exportada.data, [[60.0, -5.0, 0.0], [1.0, 2.0, 0.5]])


def test_cada_capa_consume_la_referencia_exportada_por_la_anterior(cfg, rng, episodio):
    decodificador, z, centros = _entradas_semanticas(cfg, rng, episodio)
    salidas = run_semantic_decoder(decodificador, decodificador.consultas_obj, decodificador.consultas_mapa, z,
                                   decodificador.ref_inicial, centros)
    assert len(salidas) == cfg['modelo']['capas']
    for previa, siguiente in zip(salidas[:-1], salidas[1:]):
        assert np.array_equal(siguiente.referencia.data, previa.exportada.data)
        assert not siguiente.referencia.requires_grad


def test_sin_interaccion_obj_map_equivale_a_decodificadores_separados(cfg, rng, episodio):
    decodificador, z, centros = _entradas_semanticas(cfg, rng, episodio)
    capa = decodificador.capas[0]
    ref = decodificador.ref_inicial
    pos_obj = decodificador.embedding_posicional(ref)
    argumentos = (capa, decodificador.consultas_obj, decodificador.consultas_mapa, z, ref, {'obj_map': False},
                  centros, pos_obj, decodificador.posicional_mapa)
    o_juntos, m_juntos = interactive_layer(*argumentos)
    o_separados, m_separados = interactive_layer(*argumentos, separado=True)
    np.testing.assert_allclose(o_juntos.data, o_separados.data, atol=1e-12)
    np.testing.assert_allclose(m_juntos.data, m_separados.data, atol=1e-12)


def test_bandera_de_movimiento_rechazada_en_el_decodificador_semantico(cfg, rng, episodio):
    decodificador, z, centros = _entradas_semanticas(cfg, rng, episodio)
    with pytest.raises(ErrorConfiguracion):
        run_semantic_decoder(decodificador, decodificador.consultas_obj, decodificador.consultas_mapa, z,
                             decodificador.ref_inicial, centros, {'obj_map': True, 'obj_mt': True})


def test_velocidad_desde_trayectoria_es_exacta_para_movimiento_uniforme():
    dt = 0.5
    t = np.arange(-2, 3)
    puntos = np.stack([3.0 + 4.0 * t * dt, -1.0 - 2.0 * t * dt], axis=1)[None]
    velocidad = velocity_from_trajectory(TrayectoriaUnimodal(ag.Tensor(puntos), 2), dt)
    np.testing.assert_allclose(velocidad.data, [[4.0, -2.0]], atol=1e-12)


def test_unimodal_con_cabeza_anulada_y_sin_ancla_queda_en_el_origen(rng):
    cabeza = MLP([8, 8, 2 * (2 + 3 + 1)], rng)
    cabeza.anular()
    trayectoria = predict_unimodal(cabeza, ag.Tensor(rng.normal(size=(5, 8))), 2, 3)
    assert trayectoria.puntos.shape == (5, 6, 2)
    assert not np.any(trayectoria.puntos.data)
    assert not np.any(velocity_from_trajectory(trayectoria, 0.5).data)


def test_velocidad_desde_trayectoria_sin_pasado_lanza_error():
    with pytest.raises(ErrorForma):
        velocity_from_trajectory(TrayectoriaUnimodal(ag.Tensor(np.zeros((1, 3, 2))), 0), 0.5)


def test_velocidad_por_diferencia_de_un_track_nuevo_lanza_error():
    with pytest.raises(ErrorMetrica):
        velocidad_por_diferencia([1.0, 1.0], None, 0.5)
    np.testing.assert_allclose(velocidad_por_diferencia([2.0, 1.0, 0.3], [1.0, 0.0, 0.0], 0.5), [2.0, 2.0])


@pytest.mark.parametrize("d_mt", [8, 4])
def test_conteo_analitico_de_la_pila_de_movimiento(cfg, d_mt):
    cfg_modelo = dict(cfg['modelo'], d_mt=d_mt)
    pila = DecodificadorMovimiento(cfg_modelo, 50.0, np.random.default_rng(0))
    assert pila.numero_parametros() == conteo_pila_movimiento(cfg_modelo)


def _frame_modelo(modelo, episodio, **opciones):
    consultas = propagate(ConjuntoRastreo(), *modelo.consultas_frescas(), *modelo.normas_propagacion())
    frame = episodio.frames[0]
    return modelo.procesar_frame(episodio.tokens[0], consultas, frame.ego.posicion, **opciones)


@pytest.mark.parametrize("arquitectura", ['divided', 'sequential'])
def test_orden_medicion_actualizacion_prediccion(cfg, cfg_secuencial, episodio, arquitectura):
    configuracion = cfg if arquitectura == 'divided' else cfg_secuencial
    modelo = ModeloDMAD(configuracion)
    salida = _frame_modelo(modelo, episodio)
    assert salida.registro_orden == orden_esperado(configuracion['modelo']['capas'], arquitectura)
    assert (modelo.movimiento is None) == (arquitectura == 'sequential')


def test_formas_de_salida_del_modelo(cfg, episodio):
    modelo = ModeloDMAD(cfg)
    salida = _frame_modelo(modelo, episodio)
    m = cfg['modelo']
    assert salida.final.cajas.logits.shape == (m['n_obj'], 3)
    assert salida.final.mapa.vertices.shape == (m['n_map'], m['vertices_mapa'], 2)
    assert salida.unimodal.puntos.shape == (m['n_obj'], m['t_pasado'] + 2 + 1, 2)
    assert salida.multimodal.trayectorias.shape == (m['n_obj'], m['k_modos'], m['t_fut_multi'], 2)
    np.testing.assert_allclose(salida.multimodal.confianzas.sum(axis=1), np.ones(m['n_obj']))
    assert salida.plan.shape == (m['t_plan'], 2)
    assert salida.velocidad.shape == (m['n_obj'], 2)
    assert salida.referencias_siguientes().shape == (m['n_obj'], 3)


def test_referencias_de_movimiento_son_las_exportadas(cfg, episodio):
    salida = _frame_modelo(ModeloDMAD(cfg), episodio)
    for capa, ref in zip(salida.semanticas, salida.refs_movimiento):
        assert np.array_equal(ref, capa.exportada.data)


def test_plan_con_cabeza_anulada_repite_la_posicion_del_ego(cfg, episodio):
    modelo = ModeloDMAD(cfg)
    modelo.cabezas.plan.anular()
    salida = _frame_modelo(modelo, episodio)
    posicion = episodio.frames[0].ego.posicion
    np.testing.assert_allclose(salida.plan.data, np.tile(posicion, (cfg['modelo']['t_plan'], 1)))


@pytest.mark.parametrize("familia, lado_sin_gradiente", [
    ('movimiento', 'semantico.'),
    ('semantica', 'movimiento.'),
])
def test_division_de_gradientes_en_arquitectura_dividida(cfg, episodio, familia, lado_sin_gradiente):
    modelo = ModeloDMAD(cfg)
    salida = _frame_modelo(modelo, episodio, multimodal=True, plan=False)
    if familia == 'movimiento':
        perdida = ag.sum(ag.square(salida.unimodal.puntos)) + ag.sum(ag.square(salida.multimodal.trayectorias))
    else:
        perdida = ag.sum(ag.square(salida.final.cajas.centro)) + ag.sum(salida.final.cajas.logits)
    nombrados = modelo.parametros_nombrados()
    ag.backward(perdida, [t for _, t in nombrados])
    for nombre, tensor in nombrados:
        if nombre.startswith(lado_sin_gradiente):
            assert not np.any(tensor.grad), nombre
    codificador = [t for nombre, t in nombrados if nombre.startswith('codificador.')]
    assert any(np.any(t.grad) for t in codificador)


def test_secuencial_rechaza_banderas_con_consultas_de_movimiento(cfg):
    cambios = dict(cfg['ablacion'], architecture='sequential',
                   interactions={'obj_map': True, 'obj_mt': True, 'mt_map': False})
    with pytest.raises(ErrorConfiguracion):
        ModeloDMAD(dict(cfg, ablacion=cambios))


def test_plan_ego_forma(cfg, rng):
    modelo = ModeloDMAD(cfg)
    z = ag.Tensor(rng.normal(size=(16, cfg['modelo']['d'])))
    plan = plan_ego(modelo.cabezas, modelo.cabezas.consulta_ego, z, [1.0, 2.0], rng.normal(size=(16, 2)))
    assert plan.shape == (cfg['modelo']['t_plan'], 2)
