# decodificador_semantico.py
"""
Decodificador semantico interactivo
Consultas de objeto y de mapa intercambian informacion en cada capa y luego
atienden por separado a los tokens del sensor; las cabezas decodifican cajas
(sin velocidad) y polilineas vectorizadas.
"""

import numpy as np

import autograd as ag
from capas import (FFN, MLP, AtencionMultiCabeza, Lineal, Modulo, NormaCapa,
                   distancias_cuadradas, mascara_por_bloques)
from config import ErrorConfiguracion, ErrorForma

CATEGORIAS_CAJA = ('vehicle', 'pedestrian', 'background')
CATEGORIAS_MAPA_PRED = ('lane-divider', 'crossing', 'boundary', 'background')

# desfases (3) + tamanos (3) + seno/coseno (2) + logits
CANALES_CAJA = 3 + 3 + 2 + len(CATEGORIAS_CAJA)
CANALES_VELOCIDAD = 2
MARGEN_REFERENCIA = 10.0


class PrediccionCajas:
    """Cajas decodificadas de un conjunto de consultas de objeto"""

    def __init__(self, logits, desfases, tamanos, seno_coseno, centro, velocidad=None):
        self.logits = logits
        self.desfases = desfases
        self.tamanos = tamanos
        self.seno_coseno = seno_coseno
        self.centro = centro
        self.velocidad = velocidad
        self.probabilidades = ag.softmax(ag.stop_gradient(logits), axis=-1).data
        rumbo = np.arctan2(seno_coseno.data[:, 0], seno_coseno.data[:, 1])
        self.rumbo = np.where(rumbo <= -np.pi, np.pi, rumbo)

    @property
    def confianza(self):
        """1 - p(background)"""
        return 1.0 - self.probabilidades[:, -1]

    @property
    def categoria(self):
        """Indice de la categoria de primer plano mas probable"""
        return np.argmax(self.probabilidades[:, :-1], axis=1)


class PrediccionMapa:
    """Polilineas decodificadas de las consultas de mapa"""

    def __init__(self, logits, vertices):
        self.logits = logits
        self.vertices = vertices
        self.probabilidades = ag.softmax(ag.stop_gradient(logits), axis=-1).data

    @property
    def confianza(self):
        return 1.0 - self.probabilidades[:, -1]

    @property
    def categoria(self):
        return np.argmax(self.probabilidades[:, :-1], axis=1)


class SalidaCapaSemantica:
    """Resultado de una capa: consultas, cajas, mapa, referencia consumida y exportada"""

    def __init__(self, capa, q_obj, q_map, cajas, mapa, referencia, exportada):
        self.capa = capa
        self.q_obj = q_obj
        self.q_map = q_map
        self.cajas = cajas
        self.mapa = mapa
        self.referencia = referencia
        self.exportada = exportada


class CapaInteractiva(Modulo):
    """
    Una capa del decodificador semantico

    Orden: auto-atencion conjunta enmascarada + norma, FFN conjunta + norma,
    division; por conjunto auto-atencion + norma, atencion cruzada + norma, FFN + norma.
    """

    def __init__(self, d, cabezas, oculto, rng, tau_inicial=100.0, tasa_dropout=0.0, rng_dropout=None):
        super().__init__()
        extra = {'tasa_dropout': tasa_dropout, 'rng_dropout': rng_dropout}
        self.conjunta = self.submodulo("conjunta", AtencionMultiCabeza(d, cabezas, rng, **extra))
        self.norma_conjunta = self.submodulo("norma_conjunta", NormaCapa(d))
        self.ffn_conjunta = self.submodulo("ffn_conjunta", FFN(d, oculto, rng, **extra))
        self.norma_ffn_conjunta = self.submodulo("norma_ffn_conjunta", NormaCapa(d))

        self.obj_propia = self.submodulo("obj_propia", AtencionMultiCabeza(d, cabezas, rng, **extra))
        self.obj_norma1 = self.submodulo("obj_norma1", NormaCapa(d))
        self.obj_cruzada = self.submodulo("obj_cruzada", AtencionMultiCabeza(
            d, cabezas, rng, posicional=True, tau_inicial=tau_inicial, **extra))
        self.obj_norma2 = self.submodulo("obj_norma2", NormaCapa(d))
        self.obj_ffn = self.submodulo("obj_ffn", FFN(d, oculto, rng, **extra))
        self.obj_norma3 = self.submodulo("obj_norma3", NormaCapa(d))

        self.map_propia = self.submodulo("map_propia", AtencionMultiCabeza(d, cabezas, rng, **extra))
        self.map_norma1 = self.submodulo("map_norma1", NormaCapa(d))
        self.map_cruzada = self.submodulo("map_cruzada", AtencionMultiCabeza(d, cabezas, rng, **extra))
        self.map_norma2 = self.submodulo("map_norma2", NormaCapa(d))
        self.map_ffn = self.submodulo("map_ffn", FFN(d, oculto, rng, **extra))
        self.map_norma3 = self.submodulo("map_norma3", NormaCapa(d))


def _etapa_conjunta(capa, x, pos, mascara=None):
    a = capa.conjunta(x + pos, x + pos, x, mascara=mascara)
    x = capa.norma_conjunta(x + a)
    return capa.norma_ffn_conjunta(x + capa.ffn_conjunta(x))


def _validar_banderas(banderas):
    for clave in ('obj_mt', 'mt_map'):
        if banderas.get(clave):
            raise ErrorConfiguracion(
                f"la bandera {clave} involucra consultas de movimiento; se cablea fuera del decodificador semantico"
            )


def interactive_layer(capa, q_obj, q_map, z, ref, flags, centros, pos_obj, pos_map, separado=False):
    """
    Aplica una capa interactiva

    Args:
        capa (CapaInteractiva): Parametros de la capa
        q_obj (Tensor): [N_obj, d]
        q_map (Tensor): [N_map, d]
        z (Tensor): Tokens del sensor [G*G, d]
        ref (Tensor): Puntos de referencia [N_obj, 3]
        flags (dict): Solo 'obj_map' se interpreta aqui
        centros (ndarray): Centros de celda [G*G, 2]
        pos_obj, pos_map (Tensor): Embeddings posicionales de cada conjunto
        separado (bool): Ejecuta la etapa conjunta como dos decodificadores fisicamente separados

    Returns:
        tuple: (Q_obj', Q_map')
    """
    _validar_banderas(flags)
    if q_obj.shape[1] != q_map.shape[1]:
        raise ErrorForma(f"consultas de objeto (d={q_obj.shape[1]}) y mapa (d={q_map.shape[1]}) difieren")
    n_obj, n_map = q_obj.shape[0], q_map.shape[0]

    if separado:
        o = _etapa_conjunta(capa, q_obj, pos_obj)
        m = _etapa_conjunta(capa, q_map, pos_map)
    else:
        conexiones = [(0, 1)] if flags.get('obj_map', True) else []
        mascara = None if conexiones else mascara_por_bloques([n_obj, n_map], conexiones)
        unidas = _etapa_conjunta(capa, ag.concat([q_obj, q_map]), ag.concat([pos_obj, pos_map]), mascara)
        o, m = ag.split(unidas, [n_obj, n_map])

    a = capa.obj_propia(o + pos_obj, o + pos_obj, o)
    o = capa.obj_norma1(o + a)
    c = capa.obj_cruzada(o + pos_obj, z, z, dist2=distancias_cuadradas(ref.data, centros))
    o = capa.obj_norma2(o + c)
    o = capa.obj_norma3(o + capa.obj_ffn(o))

    a = capa.map_propia(m + pos_map, m + pos_map, m)
    m = capa.map_norma1(m + a)
    c = capa.map_cruzada(m + pos_map, z, z)
    m = capa.map_norma2(m + c)
    m = capa.map_norma3(m + capa.map_ffn(m))
    return o, m


def decode_boxes(cabeza, q_obj, ref, con_velocidad=False):
    """
    Decodifica cajas: centro = ref + desfases, tamanos por enlace exponencial,
    rumbo por atan2 de un par seno/coseno

    Raises:
        ErrorForma: Si el ancho de salida de la cabeza no es el contrato
    """
    salida = cabeza(q_obj)
    esperado = CANALES_CAJA + (CANALES_VELOCIDAD if con_velocidad else 0)
    if salida.shape[1] != esperado:
        raise ErrorForma(f"cabeza de cajas con {salida.shape[1]} canales, se esperan {esperado}")
    desfases = salida[:, 0:3]
    tamanos = ag.exp(salida[:, 3:6])
    seno_coseno = salida[:, 6:8]
    logits = salida[:, 8:CANALES_CAJA]
    velocidad = salida[:, CANALES_CAJA:CANALES_CAJA + CANALES_VELOCIDAD] if con_velocidad else None
    return PrediccionCajas(logits, desfases, tamanos, seno_coseno, ref + desfases, velocidad)


def decode_map(cabeza, q_map, vertices=10, escala=1.0):
    """Decodifica categoria y vertices (escalados a metros) de cada consulta de mapa"""
    salida = cabeza(q_map)
    n_cat = len(CATEGORIAS_MAPA_PRED)
    if salida.shape[1] != n_cat + 2 * vertices:
        raise ErrorForma(f"cabeza de mapa con {salida.shape[1]} canales para {vertices} vertices")
    logits = salida[:, 0:n_cat]
    puntos = ag.reshape(salida[:, n_cat:], (q_map.shape[0], vertices, 2)) * escala
    return PrediccionMapa(logits, puntos)


def exportar_referencia(centro, radio):
    """Exporta el centro decodificado como referencia: recortado y sin gradiente"""
    limite = radio + MARGEN_REFERENCIA
    return ag.Tensor(np.clip(ag.stop_gradient(centro).data, -limite, limite))


class DecodificadorSemantico(Modulo):
    """
    Pila de capas interactivas con consultas iniciales, cabezas de cajas y de mapa
    """

    def __init__(self, cfg_modelo, radio, rng, con_velocidad=False, rng_dropout=None):
        super().__init__()
        d = cfg_modelo['d']
        n_obj, n_map = cfg_modelo['n_obj'], cfg_modelo['n_map']
        self.radio = float(radio)
        self.vertices = cfg_modelo['vertices_mapa']
        self.con_velocidad = con_velocidad

        self.consultas_obj = self.parametro("consultas_obj", rng.normal(0.0, 1.0, (n_obj, d)))
        ref = np.zeros((n_obj, 3))
        ref[:, :2] = rng.uniform(-radio, radio, (n_obj, 2))
        self.ref_inicial = self.parametro("ref_inicial", ref)
        self.consultas_mapa = self.parametro("consultas_mapa", rng.normal(0.0, 1.0, (n_map, d)))
        self.posicional_mapa = self.parametro("posicional_mapa", rng.normal(0.0, 1.0, (n_map, d)))
        self.posicional_obj = self.submodulo("posicional_obj", Lineal(2, d, rng))
        self.norma_propagacion = self.submodulo("norma_propagacion", NormaCapa(d))

        oculto = d * cfg_modelo['factor_ffn']
        self.capas = [
            self.submodulo(f"capa{l}", CapaInteractiva(
                d, cfg_modelo['cabezas'], oculto, rng, cfg_modelo['tau_pos_inicial'],
                cfg_modelo['dropout'], rng_dropout))
            for l in range(cfg_modelo['capas'])
        ]
        canales = CANALES_CAJA + (CANALES_VELOCIDAD if con_velocidad else 0)
        self.cabeza_cajas = self.submodulo("cabeza_cajas", MLP([d, d, canales], rng))
        self.cabeza_mapa = self.submodulo(
            "cabeza_mapa", MLP([d, d, len(CATEGORIAS_MAPA_PRED) + 2 * self.vertices], rng))

    def embedding_posicional(self, ref):
        """Embedding de la posicion (x, y) normalizada por el radio del mundo"""
        return self.posicional_obj(ag.Tensor(ref.data[:, :2] / self.radio))


def run_semantic_decoder(decodificador, q_obj0, q_map0, z, ref0, centros, flags=None,
                         despues_de_capa=None, separado=False):
    """
    Ejecuta todas las capas semanticas

    Tras cada capa decodifica cajas y mapa y exporta el centro (sin gradiente)
    como referencia de la capa siguiente y de la capa de movimiento alineada.

    Args:
        despues_de_capa (callable): f(l, SalidaCapaSemantica) llamado tras exportar;
            puede retornar (q_obj, q_map) para reemplazar las consultas de la capa siguiente

    Returns:
        list: Una SalidaCapaSemantica por capa
    """
    if not decodificador.capas:
        raise ErrorConfiguracion("el decodificador semantico necesita al menos una capa")
    flags = flags or {'obj_map': True}
    pos_map = decodificador.posicional_mapa
    q_obj, q_map, ref = q_obj0, q_map0, ref0
    salidas = []
    for l, capa in enumerate(decodificador.capas):
        pos_obj = decodificador.embedding_posicional(ref)
        q_obj, q_map = interactive_layer(capa, q_obj, q_map, z, ref, flags, centros, pos_obj, pos_map,
                                         separado=separado)
        cajas = decode_boxes(decodificador.cabeza_cajas, q_obj, ref, decodificador.con_velocidad)
        mapa = decode_map(decodificador.cabeza_mapa, q_map, decodificador.vertices, decodificador.radio)
        exportada = exportar_referencia(cajas.centro, decodificador.radio)
        salida = SalidaCapaSemantica(l, q_obj, q_map, cajas, mapa, ref, exportada)
        salidas.append(salida)
        if despues_de_capa is not None:
            reemplazo = despues_de_capa(l, salida)
            if reemplazo is not None:
                q_obj, q_map = reemplazo
        ref = exportada
    return salidas
