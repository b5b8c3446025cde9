# test_rastreador.py
"""
Pruebas del rastreo por propagacion de consultas
"""

import numpy as np
import pytest

import autograd as ag
from config import ErrorConfiguracion, ErrorEntrenamiento
from entrenamiento import ResultadoEmparejamiento
from rastreador import (ConjuntoRastreo, PoliticaPropagacion, actualizar_rastreo, propagate, retire,
                        select_positives)

N, D = 4, 3


def _frescas():
    q_obj = ag.Tensor(np.arange(N * D, dtype=np.float64).reshape(N, D), requires_grad=True)
    q_mt = ag.Tensor(-np.arange(N * D, dtype=np.float64).reshape(N, D), requires_grad=True)
    ref = ag.Tensor(np.zeros((N, 3)), requires_grad=True)
    return q_obj, q_mt, ref


def _frame(conjunto, confianzas, politica, refs=None):
    """Propaga, actualiza con las salidas iguales a las entradas y retorna los ids"""
    consultas = propagate(conjunto, *_frescas())
    refs = np.tile([1.0, 2.0, 0.0], (N, 1)) if refs is None else refs
    positivos = select_positives(np.asarray(confianzas), 'inference', tau=politica.tau)
    return consultas, actualizar_rastreo(conjunto, consultas, positivos, consultas.q_obj, consultas.q_mt,
                                         refs, np.asarray(confianzas), politica)


def test_positivos_en_inferencia_usan_umbral_estricto():
    positivos = select_positives(np.array([0.2, 0.35, 0.9, 0.36]), 'inference', tau=0.35)
    assert positivos.tolist() == [2, 3]


def test_positivos_en_entrenamiento_son_las_consultas_emparejadas():
    emparejamiento = ResultadoEmparejamiento([(3, 10), (0, 11)], [1, 2], [], 0.0)
    assert select_positives(np.zeros(4), 'training', emparejamiento).tolist() == [0, 3]
    with pytest.raises(ErrorEntrenamiento):
        select_positives(np.zeros(4), 'training')


def test_politica_invalida_lanza_error():
    with pytest.raises(ErrorConfiguracion):
        PoliticaPropagacion('online')
    with pytest.raises(ErrorConfiguracion):
        PoliticaPropagacion('inference', tau=1.0)
    with pytest.raises(ErrorConfiguracion):
        select_positives(np.zeros(2), 'inference')


def test_conjunto_vacio_usa_consultas_frescas():
    frescas = _frescas()
    consultas = propagate(ConjuntoRastreo(), *frescas)
    assert consultas.q_obj is frescas[0]
    assert consultas.propagadas == 0
    assert consultas.ids.tolist() == [-1] * N


def test_tracks_ocupan_los_primeros_huecos_con_su_referencia():
    politica = PoliticaPropagacion('inference', tau=0.5)
    conjunto = ConjuntoRastreo()
    refs = np.array([[5.0, 6.0, 0.0], [0.0, 0.0, 0.0], [7.0, 8.0, 1.0], [0.0, 0.0, 0.0]])
    _, ids = _frame(conjunto, [0.9, 0.1, 0.8, 0.2], politica, refs)
    assert ids.tolist() == [0, -1, 1, -1]

    consultas = propagate(conjunto, *_frescas())
    assert consultas.propagadas == 2
    assert consultas.ids.tolist() == [0, 1, -1, -1]
    np.testing.assert_array_equal(consultas.ref.data[:2], refs[[0, 2]])
    np.testing.assert_array_equal(consultas.q_obj.data[1], np.arange(N * D).reshape(N, D)[2])
    np.testing.assert_array_equal(consultas.q_obj.data[2:], np.arange(N * D).reshape(N, D)[:2])


def test_inferencia_desconecta_los_embeddings_propagados():
    politica = PoliticaPropagacion('inference', tau=0.5)
    conjunto = ConjuntoRastreo()
    _frame(conjunto, [0.9, 0.1, 0.1, 0.1], politica)
    assert not conjunto.entradas[0].q_obj.requires_grad
    assert not conjunto.entradas[0].q_mt.requires_grad


def test_entrenamiento_conserva_el_grafo_entre_frames():
    politica = PoliticaPropagacion('training', tau=0.5)
    conjunto = ConjuntoRastreo()
    consultas = propagate(conjunto, *_frescas())
    emparejamiento = ResultadoEmparejamiento([(1, 7)], [0, 2, 3], [], 0.0)
    positivos = select_positives(np.zeros(N), 'training', emparejamiento)
    actualizar_rastreo(conjunto, consultas, positivos, consultas.q_obj, consultas.q_mt,
                       np.zeros((N, 3)), np.full(N, 0.6), politica, ids_verdad=[-1, 7, -1, -1])
    assert conjunto.entradas[0].q_obj.requires_grad
    assert conjunto.entradas[0].id_verdad == 7


def test_identificadores_no_se_reutilizan_y_retiro_tras_fallos():
    politica = PoliticaPropagacion('inference', tau=0.5, fallos_max=2)
    conjunto = ConjuntoRastreo()
    _frame(conjunto, [0.9, 0.1, 0.1, 0.1], politica)
    assert conjunto.ids() == [0]
    _frame(conjunto, [0.1, 0.1, 0.1, 0.1], politica)
    assert conjunto.ids() == [0] and conjunto.entradas[0].fallos == 1
    _frame(conjunto, [0.1, 0.1, 0.1, 0.1], politica)
    assert conjunto.ids() == []
    _, ids = _frame(conjunto, [0.9, 0.1, 0.1, 0.1], politica)
    assert ids[0] == 1


def test_track_positivo_reinicia_sus_fallos():
    politica = PoliticaPropagacion('inference', tau=0.5, fallos_max=2)
    conjunto = ConjuntoRastreo()
    _frame(conjunto, [0.9, 0.1, 0.1, 0.1], politica)
    _frame(conjunto, [0.1, 0.1, 0.1, 0.1], politica)
    _frame(conjunto, [0.8, 0.1, 0.1, 0.1], politica)
    assert conjunto.entradas[0].fallos == 0
    assert conjunto.entradas[0].edad == 3


def test_fallos_max_cero_retira_al_primer_fallo():
    conjunto = ConjuntoRastreo()
    _frame(conjunto, [0.9, 0.1, 0.1, 0.1], PoliticaPropagacion('inference', tau=0.5, fallos_max=0))
    assert len(conjunto) == 1
    _frame(conjunto, [0.1, 0.1, 0.1, 0.1], PoliticaPropagacion('inference', tau=0.5, fallos_max=0))
    assert len(conjunto) == 0


def test_limite_de_tracks_nuevos_por_confianza():
    politica = PoliticaPropagacion('inference', tau=0.5, max_nuevos=2)
    conjunto = ConjuntoRastreo()
    _, ids = _frame(conjunto, [0.6, 0.9, 0.7, 0.95], politica)
    assert ids.tolist() == [-1, 0, -1, 1]
    assert sorted(conjunto.ids()) == [0, 1]


def test_exceso_de_tracks_descarta_los_de_menor_confianza():
    politica = PoliticaPropagacion('inference', tau=0.5)
    conjunto = ConjuntoRastreo()
    _frame(conjunto, [0.9, 0.8, 0.7, 0.6], politica)
    q_obj, q_mt, ref = _frescas()
    consultas = propagate(conjunto, q_obj[0:2], q_mt[0:2], ref[0:2])
    assert consultas.descartadas == 2
    assert consultas.ids.tolist() == [0, 1]
    assert len(conjunto.registro) == 1


def _recorrer_con_confianzas_aleatorias(semilla, frames):
    """Frames con confianzas uniformes; verifica el tope de tracks y la unicidad de ids"""
    rng = np.random.default_rng(semilla)
    politica = PoliticaPropagacion('inference', tau=0.5, fallos_max=int(rng.integers(0, 4)))
    conjunto = ConjuntoRastreo()
    vistos = set()
    for _ in range(frames):
        consultas, ids = _frame(conjunto, rng.uniform(0.0, 1.0, N), politica)
        assert consultas.propagadas <= N
        assert len(conjunto) <= N
        nuevos = [int(i) for i, previo in zip(ids, consultas.ids) if i >= 0 and previo < 0]
        assert not vistos.intersection(nuevos)
        vistos.update(nuevos)


@pytest.mark.parametrize("semilla", range(5))
def test_numero_de_tracks_nunca_excede_las_consultas(semilla):
    _recorrer_con_confianzas_aleatorias(semilla, 20)


@pytest.mark.lento
def test_tope_de_tracks_en_mil_frames():
    _recorrer_con_confianzas_aleatorias(99, 1000)


def test_retire_conserva_tracks_por_debajo_del_limite():
    conjunto = ConjuntoRastreo()
    _frame(conjunto, [0.9, 0.9, 0.1, 0.1], PoliticaPropagacion('inference', tau=0.5))
    conjunto.entradas[0].fallos = 3
    retire(conjunto, 3)
    assert conjunto.ids() == [1]
