# rastreador.py
"""
Rastreo multi-objeto por propagacion de consultas
Las parejas positivas (consulta de objeto, consulta de movimiento) conservan su
identificador entre frames; s_1 de la prediccion unimodal es la referencia siguiente.
"""

import numpy as np

import autograd as ag
from config import ErrorConfiguracion, ErrorEntrenamiento

MODOS = ('training', 'inference')


class PoliticaPropagacion:
    """Modo de positividad, umbral tau, limite de tracks nuevos por frame y fallos tolerados"""

    def __init__(self, modo='inference', tau=0.35, max_nuevos=32, fallos_max=2):
        if modo not in MODOS:
            raise ErrorConfiguracion(f"modo de propagacion desconocido: {modo}")
        if not 0.0 < tau < 1.0:
            raise ErrorConfiguracion(f"tau debe estar en (0, 1), recibido {tau}")
        self.modo = modo
        self.tau = float(tau)
        self.max_nuevos = int(max_nuevos)
        self.fallos_max = int(fallos_max)

    @classmethod
    def desde_configuracion(cls, cfg, modo):
        rastreo = cfg['rastreo']
        return cls(modo, rastreo['tau'], rastreo['max_nuevos'], rastreo['fallos_max'])


class EntradaRastreo:
    """Un track vivo: identificador, embeddings emparejados y referencia siguiente"""

    def __init__(self, id_track, q_obj, q_mt, ref_siguiente, confianza, id_verdad=-1):
        self.id = int(id_track)
        self.id_verdad = int(id_verdad)
        self.q_obj = q_obj
        self.q_mt = q_mt
        self.ref_siguiente = np.array(ref_siguiente, dtype=np.float64)
        self.confianza = float(confianza)
        self.edad = 1
        self.fallos = 0
        self.centro_previo = None


class ConjuntoRastreo:
    """Tracks vivos de un episodio; los identificadores nunca se reutilizan"""

    def __init__(self):
        self.entradas = []
        self._siguiente_id = 0
        self.registro = []

    def nuevo_id(self):
        nuevo = self._siguiente_id
        self._siguiente_id += 1
        return nuevo

    def ids(self):
        return [e.id for e in self.entradas]

    def __len__(self):
        return len(self.entradas)


class ConsultasIniciales:
    """Consultas de un frame: propagadas primero y frescas despues"""

    def __init__(self, q_obj, q_mt, ref, ids, ids_verdad, propagadas, descartadas=0):
        self.q_obj = q_obj
        self.q_mt = q_mt
        self.ref = ref
        self.ids = np.asarray(ids, dtype=np.int64)
        self.ids_verdad = np.asarray(ids_verdad, dtype=np.int64)
        self.propagadas = int(propagadas)
        self.descartadas = int(descartadas)


def select_positives(confianzas, modo, emparejamiento=None, tau=None):
    """
    Indices positivos de un frame

    Args:
        confianzas (ndarray): Confianza por consulta
        modo (str): 'training' (emparejamiento) o 'inference' (umbral)
        emparejamiento (ResultadoEmparejamiento): Requerido en entrenamiento
        tau (float): Requerido en inferencia

    Returns:
        ndarray: Indices ordenados
    """
    if modo == 'training':
        if emparejamiento is None:
            raise ErrorEntrenamiento("modo entrenamiento sin resultado de emparejamiento")
        return np.array(sorted(q for q, _ in emparejamiento.pares), dtype=np.int64)
    if modo == 'inference':
        if tau is None:
            raise ErrorConfiguracion("modo inferencia sin umbral tau")
        return np.flatnonzero(np.asarray(confianzas) > tau).astype(np.int64)
    raise ErrorConfiguracion(f"modo de propagacion desconocido: {modo}")


def _filas(tensores):
    return ag.concat([ag.reshape(t, (1, t.shape[-1])) for t in tensores])


def propagate(conjunto, frescas_obj, frescas_mt, ref_fresca, norma_obj=None, norma_mt=None, verbose=False):
    """
    Consultas iniciales del frame t+1

    Los tracks ocupan los primeros huecos con sus embeddings (identidad seguida de
    la norma compartida) y ref = s_1 sin gradiente; el resto son consultas frescas.
    Si hay mas tracks que huecos se descartan los de menor confianza.
    """
    n = frescas_obj.shape[0]
    descartadas = 0
    if len(conjunto.entradas) > n:
        ordenadas = sorted(conjunto.entradas, key=lambda e: (-e.confianza, e.id))
        descartadas = len(ordenadas) - n
        conservar = {e.id for e in ordenadas[:n]}
        conjunto.entradas = [e for e in conjunto.entradas if e.id in conservar]
        conjunto.registro.append(f"descartados {descartadas} tracks por limite de {n} consultas")
        if verbose:
            print(f"Aviso: se descartan {descartadas} tracks (limite {n})")

    entradas = sorted(conjunto.entradas, key=lambda e: e.id)
    n_prop = len(entradas)
    n_frescas = n - n_prop

    if n_prop == 0:
        return ConsultasIniciales(frescas_obj, frescas_mt, ref_fresca, [-1] * n, [-1] * n, 0, descartadas)

    q_obj = _filas([e.q_obj for e in entradas])
    if norma_obj is not None:
        q_obj = norma_obj(q_obj)
    ref = ag.Tensor(np.stack([e.ref_siguiente for e in entradas]))
    q_mt = None
    if frescas_mt is not None:
        q_mt = _filas([e.q_mt for e in entradas])
        if norma_mt is not None:
            q_mt = norma_mt(q_mt)

    if n_frescas > 0:
        q_obj = ag.concat([q_obj, frescas_obj[0:n_frescas]])
        ref = ag.concat([ref, ref_fresca[0:n_frescas]])
        if q_mt is not None:
            q_mt = ag.concat([q_mt, frescas_mt[0:n_frescas]])

    ids = [e.id for e in entradas] + [-1] * n_frescas
    ids_verdad = [e.id_verdad for e in entradas] + [-1] * n_frescas
    return ConsultasIniciales(q_obj, q_mt, ref, ids, ids_verdad, n_prop, descartadas)


def actualizar_rastreo(conjunto, consultas, positivos, q_obj, q_mt, refs_siguientes, confianzas,
                       politica, ids_verdad=None, centros=None):
    """
    Incorpora el resultado de un frame al conjunto de tracks

    Los huecos con track vivo actualizan embeddings y referencia; solo los
    positivos reinician su contador de fallos. Los positivos sin identificador
    abren tracks nuevos (a lo sumo max_nuevos, por confianza descendente).

    Returns:
        ndarray: Identificador por consulta tras el frame (-1 si no tiene)
    """
    ids = consultas.ids.copy()
    positivos = set(int(i) for i in positivos)
    por_id = {e.id: e for e in conjunto.entradas}
    desconectar = politica.modo == 'inference'

    def fila(tensor, i):
        if tensor is None:
            return None
        valor = tensor[i]
        return ag.stop_gradient(valor) if desconectar else valor

    candidatos = sorted((i for i in positivos if ids[i] < 0), key=lambda i: (-confianzas[i], i))
    nuevos = set(candidatos[:politica.max_nuevos])

    vistos = set()
    for i in range(len(ids)):
        id_verdad = -1 if ids_verdad is None else int(ids_verdad[i])
        if ids[i] >= 0 and ids[i] in por_id:
            entrada = por_id[ids[i]]
            entrada.q_obj = fila(q_obj, i)
            entrada.q_mt = fila(q_mt, i)
            entrada.ref_siguiente = np.array(refs_siguientes[i], dtype=np.float64)
            entrada.confianza = float(confianzas[i])
            entrada.edad += 1
            if centros is not None:
                entrada.centro_previo = np.array(centros[i], dtype=np.float64)
            if i in positivos:
                entrada.fallos = 0
                if id_verdad >= 0:
                    entrada.id_verdad = id_verdad
            else:
                entrada.fallos += 1
            vistos.add(entrada.id)
        elif i in nuevos:
            entrada = EntradaRastreo(conjunto.nuevo_id(), fila(q_obj, i), fila(q_mt, i),
                                     refs_siguientes[i], confianzas[i], id_verdad)
            if centros is not None:
                entrada.centro_previo = np.array(centros[i], dtype=np.float64)
            conjunto.entradas.append(entrada)
            ids[i] = entrada.id
            vistos.add(entrada.id)

    for entrada in conjunto.entradas:
        if entrada.id not in vistos:
            entrada.fallos += 1

    retire(conjunto, politica.fallos_max)
    return ids


def retire(conjunto, fallos_max):
    """
    Elimina los tracks con fallos_max frames consecutivos sin ser positivos
    (con fallos_max = 0 cualquier fallo elimina el track)
    """
    limite = max(int(fallos_max), 1)
    conjunto.entradas = [e for e in conjunto.entradas if e.fallos < limite]
    return conjunto
