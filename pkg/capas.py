# capas.py
"""
Capas con parametros sobre autograd: lineal, normalizacion, FFN, MLP y atencion multi-cabeza
"""

import numpy as np

import autograd as ag
from config import ErrorForma


class Modulo:
    """
    Contenedor de parametros con nombres jerarquicos y orden determinista
    """

    def __init__(self):
        self._parametros = {}
        self._submodulos = {}

    def parametro(self, nombre, valores):
        """Registra un parametro entrenable"""
        tensor = ag.Tensor(valores, requires_grad=True, nombre=nombre)
        self._parametros[nombre] = tensor
        return tensor

    def submodulo(self, nombre, modulo):
        """Registra un submodulo y lo retorna"""
        self._submodulos[nombre] = modulo
        return modulo

    def parametros_nombrados(self, prefijo=""):
        """
        Lista (nombre completo, tensor) en orden de registro

        Returns:
            list: Pares nombre-tensor
        """
        pares = [(f"{prefijo}{nombre}", t) for nombre, t in self._parametros.items()]
        for nombre, modulo in self._submodulos.items():
            pares.extend(modulo.parametros_nombrados(f"{prefijo}{nombre}."))
        return pares

    def parametros(self):
        return [t for _, t in self.parametros_nombrados()]

    def numero_parametros(self):
        return int(sum(t.size for t in self.parametros()))


def _uniforme(rng, filas, columnas):
    limite = 1.0 / np.sqrt(filas)
    return rng.uniform(-limite, limite, size=(filas, columnas))


class Lineal(Modulo):
    """y = x W + b"""

    def __init__(self, entrada, salida, rng):
        super().__init__()
        self.entrada = entrada
        self.salida = salida
        self.peso = self.parametro("peso", _uniforme(rng, entrada, salida))
        self.sesgo = self.parametro("sesgo", np.zeros(salida))

    def __call__(self, x):
        if x.shape[-1] != self.entrada:
            raise ErrorForma(f"Lineal: entrada {x.shape} para dimension {self.entrada}")
        return ag.matmul(x, self.peso) + self.sesgo

    def anular(self):
        """Pone a cero peso y sesgo (cabeza anulada)"""
        self.peso.data[...] = 0.0
        self.sesgo.data[...] = 0.0


class NormaCapa(Modulo):
    """Layer norm sobre el ultimo eje con escala y desplazamiento aprendidos"""

    def __init__(self, d):
        super().__init__()
        self.escala = self.parametro("escala", np.ones(d))
        self.desplazamiento = self.parametro("desplazamiento", np.zeros(d))

    def __call__(self, x):
        return ag.layer_norm(x, self.escala, self.desplazamiento)


class FFN(Modulo):
    """Dos capas lineales con ReLU intermedia"""

    def __init__(self, d, oculto, rng, tasa_dropout=0.0, rng_dropout=None):
        super().__init__()
        self.entrada = self.submodulo("entrada", Lineal(d, oculto, rng))
        self.salida = self.submodulo("salida", Lineal(oculto, d, rng))
        self.tasa_dropout = tasa_dropout
        self.rng_dropout = rng_dropout

    def __call__(self, x):
        oculto = ag.relu(self.entrada(x))
        oculto = ag.dropout(oculto, self.tasa_dropout, self.rng_dropout)
        return self.salida(oculto)


class MLP(Modulo):
    """Perceptron multicapa con ReLU entre capas y salida lineal"""

    def __init__(self, dimensiones, rng):
        super().__init__()
        self.capas = [
            self.submodulo(f"capa{i}", Lineal(a, b, rng))
            for i, (a, b) in enumerate(zip(dimensiones[:-1], dimensiones[1:]))
        ]

    def __call__(self, x):
        for i, capa in enumerate(self.capas):
            x = capa(x)
            if i < len(self.capas) - 1:
                x = ag.relu(x)
        return x

    def anular(self):
        """Anula la ultima capa: la salida queda en cero para toda entrada"""
        self.capas[-1].anular()


class AtencionMultiCabeza(Modulo):
    """
    Atencion de producto punto escalado por cabeza con proyecciones aprendidas

    Con posicional=True cada cabeza tiene una temperatura aprendida tau y el
    sesgo -dist2 / tau se suma a los logits antes del softmax.
    """

    def __init__(self, d, cabezas, rng, posicional=False, tau_inicial=100.0,
                 tasa_dropout=0.0, rng_dropout=None):
        super().__init__()
        if d % cabezas != 0:
            raise ErrorForma(f"d={d} no es divisible por cabezas={cabezas}")
        self.d = d
        self.cabezas = cabezas
        self.dh = d // cabezas
        self.proy_q = self.submodulo("proy_q", Lineal(d, d, rng))
        self.proy_k = self.submodulo("proy_k", Lineal(d, d, rng))
        self.proy_v = self.submodulo("proy_v", Lineal(d, d, rng))
        self.proy_o = self.submodulo("proy_o", Lineal(d, d, rng))
        self.log_tau = None
        if posicional:
            self.log_tau = self.parametro("log_tau", np.full(cabezas, np.log(tau_inicial)))
        self.tasa_dropout = tasa_dropout
        self.rng_dropout = rng_dropout

    def __call__(self, consultas, claves, valores, mascara=None, sesgo=None, dist2=None):
        return multi_head_attention(self, consultas, claves, valores, mask=mascara, pos_bias=sesgo, dist2=dist2)


def multi_head_attention(modulo, queries, keys, values_in, mask=None, pos_bias=None, dist2=None):
    """
    Atencion multi-cabeza con las proyecciones de un modulo AtencionMultiCabeza

    Args:
        modulo (AtencionMultiCabeza): Proyecciones, numero de cabezas y log_tau
        queries (Tensor): [Nq, d]
        keys (Tensor): [Nk, d]
        values_in (Tensor): [Nk, d]
        mask (ndarray): booleano [Nq, Nk], False = no atender
        pos_bias (Tensor): [Nq, Nk] sumado a los logits de todas las cabezas
        dist2 (ndarray): [Nq, Nk] distancias cuadradas para el sesgo posicional

    Returns:
        Tensor: [Nq, d]
    """
    d = modulo.d
    nq, nk = queries.shape[0], keys.shape[0]
    for nombre, t in (("consultas", queries), ("claves", keys), ("valores", values_in)):
        if t.ndim != 2 or t.shape[1] != d:
            raise ErrorForma(f"atencion: {nombre} con forma {t.shape}, se espera [N, {d}]")
    if values_in.shape[0] != nk:
        raise ErrorForma("atencion: claves y valores con distinto numero de filas")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (nq, nk):
            raise ErrorForma(f"atencion: mascara {mask.shape}, se espera {(nq, nk)}")
        if not mask.any(axis=1).all():
            raise ErrorForma("atencion: fila de consulta completamente enmascarada")
    if pos_bias is not None and tuple(pos_bias.shape) != (nq, nk):
        raise ErrorForma(f"atencion: sesgo {pos_bias.shape}, se espera {(nq, nk)}")
    if dist2 is not None:
        if modulo.log_tau is None:
            raise ErrorForma("atencion: dist2 requiere una capa con sesgo posicional")
        if np.shape(dist2) != (nq, nk):
            raise ErrorForma(f"atencion: dist2 {np.shape(dist2)}, se espera {(nq, nk)}")

    q = modulo.proy_q(queries)
    k = modulo.proy_k(keys)
    v = modulo.proy_v(values_in)
    dh = modulo.dh
    escala = 1.0 / np.sqrt(dh)
    distancias = None if dist2 is None else ag.Tensor(-np.asarray(dist2, dtype=np.float64))

    salidas = []
    for h in range(modulo.cabezas):
        columnas = (slice(None), slice(h * dh, (h + 1) * dh))
        qh, kh, vh = q[columnas], k[columnas], v[columnas]
        logits = ag.matmul(qh, ag.transpose(kh)) * escala
        if pos_bias is not None:
            logits = logits + pos_bias
        if distancias is not None:
            inv_tau = ag.exp(-modulo.log_tau[h])
            logits = logits + distancias * inv_tau
        if mask is not None:
            logits = ag.enmascarar(logits, mask)
        pesos = ag.softmax(logits, axis=-1)
        pesos = ag.dropout(pesos, modulo.tasa_dropout, modulo.rng_dropout)
        salidas.append(ag.matmul(pesos, vh))

    return modulo.proy_o(ag.concat(salidas, axis=1))


def mascara_por_bloques(tamanos, conexiones=()):
    """
    Mascara booleana para auto-atencion sobre conjuntos concatenados

    Args:
        tamanos (list): Filas de cada conjunto en orden de concatenacion
        conexiones (iterable): Pares (i, j) de conjuntos que pueden atenderse (simetrico)

    Returns:
        ndarray: [N, N] con True en los bloques diagonales y en los conectados
    """
    limites = np.concatenate([[0], np.cumsum(tamanos)])
    total = int(limites[-1])
    mascara = np.zeros((total, total), dtype=bool)
    permitidos = {(i, i) for i in range(len(tamanos))}
    for i, j in conexiones:
        permitidos.add((i, j))
        permitidos.add((j, i))
    for i, j in permitidos:
        mascara[limites[i]:limites[i + 1], limites[j]:limites[j + 1]] = True
    return mascara


def distancias_cuadradas(referencias, centros):
    """Distancias cuadradas en el plano entre puntos de referencia [N, >=2] y centros [M, 2]"""
    ref = np.asarray(referencias, dtype=np.float64)[:, :2]
    diferencia = ref[:, None, :] - np.asarray(centros, dtype=np.float64)[None, :, :]
    return (diferencia * diferencia).sum(axis=-1)
