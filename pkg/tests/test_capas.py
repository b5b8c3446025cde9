# test_capas.py
"""
Pruebas de capas: atencion multi-cabeza, mascaras por bloques y modulos
"""

import numpy as np
import pytest

import autograd as ag
from capas import MLP, AtencionMultiCabeza, Lineal, distancias_cuadradas, mascara_por_bloques, multi_head_attention
from config import ErrorForma


@pytest.mark.parametrize("semilla", range(20))
def test_gradiente_de_atencion_con_sesgo_posicional(semilla):
    rng = np.random.default_rng(semilla)
    atencion = AtencionMultiCabeza(4, 2, rng, posicional=True, tau_inicial=5.0)
    consultas = ag.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    claves = ag.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    dist2 = rng.uniform(0.0, 4.0, size=(3, 5))
    pesos = rng.normal(size=(3, 4))

    def funcion(t):
        return ag.sum(atencion(t[0], t[1], t[1], dist2=dist2) * pesos)

    assert ag.comprobar_gradiente(funcion, [consultas, claves, atencion.log_tau]) < 1e-4


@pytest.mark.parametrize("semilla", range(20))
def test_gradiente_de_proyecciones_de_atencion(semilla):
    rng = np.random.default_rng(semilla)
    atencion = AtencionMultiCabeza(4, 2, rng)
    x = ag.Tensor(rng.normal(size=(4, 4)))
    mascara = mascara_por_bloques([2, 2])

    def funcion(t):
        return ag.sum(ag.square(atencion(x, x, x, mascara=mascara)))

    assert ag.comprobar_gradiente(funcion, [atencion.proy_q.peso, atencion.proy_v.sesgo]) < 1e-4


def test_mascara_por_bloques_forma_y_simetria():
    mascara = mascara_por_bloques([2, 1, 3], [(0, 2)])
    assert mascara.shape == (6, 6)
    assert mascara[:2, :2].all() and mascara[2:3, 2:3].all() and mascara[3:, 3:].all()
    assert mascara[:2, 3:].all() and mascara[3:, :2].all()
    assert not mascara[:2, 2:3].any() and not mascara[2:3, 3:].any()


def test_atencion_por_bloques_sin_conexiones_equivale_a_atencion_separada(rng):
    atencion = AtencionMultiCabeza(4, 2, rng)
    a = ag.Tensor(rng.normal(size=(3, 4)))
    b = ag.Tensor(rng.normal(size=(2, 4)))
    juntos = ag.concat([a, b])
    conjunta = atencion(juntos, juntos, juntos, mascara=mascara_por_bloques([3, 2])).data
    separada_a = atencion(a, a, a).data
    separada_b = atencion(b, b, b).data
    np.testing.assert_allclose(conjunta[:3], separada_a, atol=1e-12)
    np.testing.assert_allclose(conjunta[3:], separada_b, atol=1e-12)


def test_fila_completamente_enmascarada_lanza_error(rng):
    atencion = AtencionMultiCabeza(4, 2, rng)
    x = ag.Tensor(rng.normal(size=(2, 4)))
    mascara = np.array([[True, True], [False, False]])
    with pytest.raises(ErrorForma):
        atencion(x, x, x, mascara=mascara)


def test_dimension_no_divisible_por_cabezas(rng):
    with pytest.raises(ErrorForma):
        AtencionMultiCabeza(6, 4, rng)


def test_dist2_sin_sesgo_posicional_lanza_error(rng):
    atencion = AtencionMultiCabeza(4, 2, rng)
    x = ag.Tensor(rng.normal(size=(2, 4)))
    with pytest.raises(ErrorForma):
        atencion(x, x, x, dist2=np.zeros((2, 2)))


def test_tau_grande_anula_el_sesgo_posicional(rng):
    cercana = AtencionMultiCabeza(4, 2, np.random.default_rng(1), posicional=True, tau_inicial=1e12)
    plana = AtencionMultiCabeza(4, 2, np.random.default_rng(1))
    x = ag.Tensor(rng.normal(size=(3, 4)))
    dist2 = rng.uniform(0.0, 10.0, size=(3, 3))
    np.testing.assert_allclose(cercana(x, x, x, dist2=dist2).data, plana(x, x, x).data, atol=1e-9)


def test_distancias_cuadradas_usa_solo_el_plano():
    ref = np.array([[0.0, 0.0, 5.0], [1.0, 1.0, -2.0]])
    centros = np.array([[3.0, 4.0]])
    np.testing.assert_allclose(distancias_cuadradas(ref, centros), [[25.0], [13.0]])


def test_lineal_rechaza_dimension_erronea(rng):
    with pytest.raises(ErrorForma):
        Lineal(3, 2, rng)(ag.Tensor(np.ones((1, 4))))


def test_mlp_anulado_produce_ceros_y_nombres_deterministas(rng):
    mlp = MLP([3, 5, 2], rng)
    nombres = [nombre for nombre, _ in mlp.parametros_nombrados()]
    assert nombres == ['capa0.peso', 'capa0.sesgo', 'capa1.peso', 'capa1.sesgo']
    mlp.anular()
    assert np.array_equal(mlp(ag.Tensor(rng.normal(size=(4, 3)))).data, np.zeros((4, 2)))
    assert mlp.numero_parametros() == 3 * 5 + 5 + 5 * 2 + 2


def test_atencion_funcional_coincide_con_el_modulo_y_el_sesgo_equivale_a_mascara(rng):
    atencion = AtencionMultiCabeza(4, 2, rng)
    x = ag.Tensor(rng.normal(size=(5, 4)))
    mascara = mascara_por_bloques([2, 3])
    enmascarada = multi_head_attention(atencion, x, x, x, mask=mascara)
    np.testing.assert_array_equal(enmascarada.data, atencion(x, x, x, mascara=mascara).data)
    sesgo = ag.Tensor(np.where(mascara, 0.0, -1e9))
    np.testing.assert_allclose(multi_head_attention(atencion, x, x, x, pos_bias=sesgo).data, enmascarada.data,
                               atol=1e-9)
