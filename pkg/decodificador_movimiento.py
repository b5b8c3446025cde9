# decodificador_movimiento.py
"""
Decodificador de movimiento tipo filtro de Bayes neuronal
Las consultas de movimiento (una por consulta de objeto, mas la consulta ego)
consumen las referencias exportadas sin gradiente, atienden a los tokens y
alimentan las cabezas de trayectoria unimodal, multimodal y de plan.
"""

import numpy as np

import autograd as ag
from capas import (FFN, MLP, AtencionMultiCabeza, Lineal, Modulo, NormaCapa,
                   distancias_cuadradas)
from config import ConfiguracionSistema, ErrorConfiguracion, ErrorForma, ErrorMetrica

# Escala en metros de las salidas de las cabezas de trayectoria
ESCALA_TRAYECTORIA = 5.0
ESCALA_PLAN = 10.0


class TrayectoriaUnimodal:
    """
    Waypoints s_t para t en [-t_pasado, t_futuro]; el indice t_pasado es s_0
    """

    def __init__(self, puntos, t_pasado):
        self.puntos = puntos
        self.t_pasado = int(t_pasado)

    @property
    def t_futuro(self):
        return self.puntos.shape[1] - self.t_pasado - 1

    def punto(self, t):
        """Waypoint s_t de todas las filas como Tensor [N, 2]"""
        indice = self.t_pasado + t
        if not 0 <= indice < self.puntos.shape[1]:
            raise ErrorForma(f"paso {t} fuera de [-{self.t_pasado}, {self.t_futuro}]")
        return self.puntos[:, indice, :]


class PrediccionMultimodal:
    """K trayectorias futuras por fila con confianzas normalizadas"""

    def __init__(self, trayectorias, log_confianzas):
        self.trayectorias = trayectorias
        self.log_confianzas = log_confianzas
        self.confianzas = np.exp(log_confianzas.data)


class CapaMovimiento(Modulo):
    """Auto-atencion + norma, atencion cruzada con sesgo posicional + norma, FFN + norma"""

    def __init__(self, d_mt, cabezas, oculto, rng, tau_inicial=100.0, tasa_dropout=0.0, rng_dropout=None):
        super().__init__()
        extra = {'tasa_dropout': tasa_dropout, 'rng_dropout': rng_dropout}
        self.propia = self.submodulo("propia", AtencionMultiCabeza(d_mt, cabezas, rng, **extra))
        self.norma1 = self.submodulo("norma1", NormaCapa(d_mt))
        self.cruzada = self.submodulo("cruzada", AtencionMultiCabeza(
            d_mt, cabezas, rng, posicional=True, tau_inicial=tau_inicial, **extra))
        self.norma2 = self.submodulo("norma2", NormaCapa(d_mt))
        self.ffn = self.submodulo("ffn", FFN(d_mt, oculto, rng, **extra))
        self.norma3 = self.submodulo("norma3", NormaCapa(d_mt))


def motion_layer(capa, q_mt, z, ref, centros, pos=None):
    """
    Q_mt^{l+1} = f^l(Q_mt^l, Z, ref^l)

    Args:
        q_mt (Tensor): Consultas de movimiento [N, d_mt] (la consulta ego incluida)
        z (Tensor): Tokens ya proyectados a d_mt
        ref (Tensor): Referencias [N, >=2], ya exportadas sin gradiente
        centros (ndarray): Centros de celda [G*G, 2]
        pos (Tensor): Embedding posicional opcional [N, d_mt]
    """
    if ref.shape[0] != q_mt.shape[0]:
        raise ErrorForma(f"{q_mt.shape[0]} consultas de movimiento con {ref.shape[0]} referencias")
    consulta = q_mt if pos is None else q_mt + pos
    a = capa.propia(consulta, consulta, q_mt)
    q = capa.norma1(q_mt + a)
    consulta = q if pos is None else q + pos
    c = capa.cruzada(consulta, z, z, dist2=distancias_cuadradas(ref.data, centros))
    q = capa.norma2(q + c)
    return capa.norma3(q + capa.ffn(q))


class DecodificadorMovimiento(Modulo):
    """
    Pila de movimiento: consultas frescas, proyeccion de tokens y capas alineadas
    con las del decodificador semantico
    """

    def __init__(self, cfg_modelo, radio, rng, rng_dropout=None):
        super().__init__()
        d, d_mt = cfg_modelo['d'], cfg_modelo['d_mt']
        self.radio = float(radio)
        self.consultas_mt = self.parametro("consultas_mt", rng.normal(0.0, 1.0, (cfg_modelo['n_obj'], d_mt)))
        self.posicional = self.submodulo("posicional", Lineal(2, d_mt, rng))
        self.proy_z = self.submodulo("proy_z", Lineal(d, d_mt, rng)) if d_mt != d else None
        self.norma_propagacion = self.submodulo("norma_propagacion", NormaCapa(d_mt))
        oculto = d_mt * cfg_modelo['factor_ffn']
        self.capas = [
            self.submodulo(f"capa{l}", CapaMovimiento(
                d_mt, cfg_modelo['cabezas'], oculto, rng, cfg_modelo['tau_pos_inicial'],
                cfg_modelo['dropout'], rng_dropout))
            for l in range(cfg_modelo['capas'])
        ]

    def proyectar_tokens(self, z):
        return z if self.proy_z is None else self.proy_z(z)

    def embedding_posicional(self, ref):
        return self.posicional(ag.Tensor(ref.data[:, :2] / self.radio))


def conteo_pila_movimiento(cfg_modelo):
    """Numero analitico de parametros de DecodificadorMovimiento"""
    d, d_mt = cfg_modelo['d'], cfg_modelo['d_mt']
    oculto = d_mt * cfg_modelo['factor_ffn']
    atencion = 4 * (d_mt * d_mt + d_mt)
    por_capa = (2 * atencion + cfg_modelo['cabezas'] + 3 * 2 * d_mt
                + d_mt * oculto + oculto + oculto * d_mt + d_mt)
    total = cfg_modelo['capas'] * por_capa
    # consultas frescas, embedding posicional (2 -> d_mt) y norma de propagacion
    total += cfg_modelo['n_obj'] * d_mt + 3 * d_mt + 2 * d_mt
    if d_mt != d:
        total += d * d_mt + d_mt
    return total


class CabezasMovimiento(Modulo):
    """
    Cabezas de trayectoria presentes en ambas arquitecturas

    dm es d_mt en la arquitectura dividida y d en la secuencial (leen Q_obj).
    """

    def __init__(self, cfg_modelo, dm, t_futuro_uni, rng, cabeza_velocidad=False):
        super().__init__()
        self.t_pasado = cfg_modelo['t_pasado']
        self.t_futuro_uni = int(t_futuro_uni)
        self.k_modos = cfg_modelo['k_modos']
        self.t_fut_multi = cfg_modelo['t_fut_multi']
        self.t_plan = cfg_modelo['t_plan']
        if self.k_modos < 1:
            raise ErrorConfiguracion("K debe ser >= 1")
        puntos = self.t_pasado + self.t_futuro_uni + 1
        tau = cfg_modelo['tau_pos_inicial']

        self.consulta_ego = self.parametro("consulta_ego", rng.normal(0.0, 1.0, (1, dm)))
        self.unimodal = self.submodulo("unimodal", MLP([dm, dm, 2 * puntos], rng))
        self.multimodal_atencion = self.submodulo("multimodal_atencion", AtencionMultiCabeza(
            dm, cfg_modelo['cabezas'], rng, posicional=True, tau_inicial=tau))
        self.multimodal = self.submodulo(
            "multimodal", MLP([dm, dm, self.k_modos * (2 * self.t_fut_multi + 1)], rng))
        self.plan_atencion = self.submodulo("plan_atencion", AtencionMultiCabeza(
            dm, cfg_modelo['cabezas'], rng, posicional=True, tau_inicial=tau))
        self.plan = self.submodulo("plan", MLP([dm, dm, 2 * self.t_plan], rng))
        self.velocidad = self.submodulo("velocidad", Lineal(dm, 2, rng)) if cabeza_velocidad else None


def _ancla(ancla, filas):
    """Ancla (x, y) constante con forma [filas, 1, 2]"""
    valores = ag.stop_gradient(ancla).data[:, :2] if isinstance(ancla, ag.Tensor) else np.asarray(ancla)[:, :2]
    return ag.Tensor(valores.reshape(filas, 1, 2))


def predict_unimodal(cabeza, q_mt, t_pasado, t_futuro, ancla=None, escala=ESCALA_TRAYECTORIA):
    """
    Trayectoria unimodal pasado+futuro por MLP de 2 capas

    Los waypoints se emiten como desplazamientos respecto del ancla (la referencia
    consumida por la consulta); sin ancla se expresan respecto del origen.
    """
    n = q_mt.shape[0]
    puntos = t_pasado + t_futuro + 1
    salida = cabeza(q_mt)
    if salida.shape[1] != 2 * puntos:
        raise ErrorForma(f"cabeza unimodal con {salida.shape[1]} canales, se esperan {2 * puntos}")
    trayectoria = ag.reshape(salida, (n, puntos, 2)) * escala
    if ancla is not None:
        trayectoria = trayectoria + _ancla(ancla, n)
    return TrayectoriaUnimodal(trayectoria, t_pasado)


def velocity_from_trajectory(trayectoria, dt):
    """
    v_0 = (s_1 - s_{-1}) / (2 dt)

    Raises:
        ErrorForma: Si faltan s_{-1} o s_1
    """
    if trayectoria.t_pasado < 1 or trayectoria.t_futuro < 1:
        raise ErrorForma("velocity_from_trajectory necesita s_-1 y s_1 (t_pasado y t_futuro >= 1)")
    return (trayectoria.punto(1) - trayectoria.punto(-1)) / (2.0 * dt)


def predict_multimodal(cabezas, q_mt, z, ref, centros, ancla=None, escala=ESCALA_TRAYECTORIA):
    """
    K trayectorias futuras y confianzas: MLP(Cross-Attn(q_mt, Z))
    """
    if cabezas.k_modos < 1:
        raise ErrorConfiguracion("K debe ser >= 1")
    n, k, t = q_mt.shape[0], cabezas.k_modos, cabezas.t_fut_multi
    c = cabezas.multimodal_atencion(q_mt, z, z, dist2=distancias_cuadradas(ref.data, centros))
    salida = cabezas.multimodal(q_mt + c)
    tray, logits = ag.split(salida, [k * 2 * t, k], axis=1)
    trayectorias = ag.reshape(tray, (n, k, t, 2)) * escala
    if ancla is not None:
        trayectorias = trayectorias + ag.reshape(_ancla(ancla, n), (n, 1, 1, 2))
    return PrediccionMultimodal(trayectorias, ag.log_softmax(logits, axis=1))


def plan_ego(cabezas, q_ego, z, posicion_ego, centros, escala=ESCALA_PLAN):
    """
    Plan del ego: t_plan waypoints anclados en la posicion actual del ego

    Returns:
        Tensor: [t_plan, 2]
    """
    posicion = np.asarray(posicion_ego, dtype=np.float64).reshape(1, 2)
    c = cabezas.plan_atencion(q_ego, z, z, dist2=distancias_cuadradas(posicion, centros))
    salida = cabezas.plan(q_ego + c)
    return ag.reshape(salida, (cabezas.t_plan, 2)) * escala + ag.Tensor(posicion)


class CableadoVelocidad:
    """Fuente de la velocidad que consume mAVE"""

    def __init__(self, modo):
        if modo not in ConfiguracionSistema.MODOS_VELOCIDAD:
            raise ErrorConfiguracion(f"modo de velocidad desconocido: {modo}")
        self.modo = modo
        self.canales_extra_caja = 2 if modo == 'regress-from-obj' else 0
        self.cabeza_mt = modo == 'regress-from-mt'
        self.requiere_historial = modo == 'bbox-difference'


def velocity_variant(mode):
    return CableadoVelocidad(mode)


def velocidad_por_diferencia(centro_actual, centro_previo, dt):
    """
    (centro_t - centro_{t-1}) / dt para tracks propagados

    Raises:
        ErrorMetrica: Para tracks nuevos (sin centro previo)
    """
    if centro_previo is None:
        raise ErrorMetrica("velocidad por diferencia indefinida para un track nuevo")
    return (np.asarray(centro_actual)[:2] - np.asarray(centro_previo)[:2]) / dt
