# autograd.py
"""
Diferenciacion automatica en modo reverso sobre arreglos densos float64
Tensor, cinta de operaciones (define-by-run) y conjunto minimo de primitivas
"""

import itertools

import numpy as np

from config import ErrorForma, ErrorGrafo

# Identificadores globales de nodo, nunca reutilizados
_contador_nodos = itertools.count()


class Cinta:
    """
    Registro ordenado de operaciones primitivas

    Cada registro es (salida, entradas, retro) donde retro recibe el gradiente
    de la salida y devuelve una contribucion por entrada (o None).
    El orden de insercion es un orden topologico valido.
    """

    def __init__(self):
        self.registros = []
        self.nodos = set()
        self.consumida = False

    def registrar(self, salida, entradas, retro):
        self.registros.append((salida, entradas, retro))
        self.nodos.add(salida.id)

    def limpiar(self):
        """Libera todos los nodos intermedios (los parametros no viven en la cinta)"""
        self.registros = []
        self.nodos = set()
        self.consumida = False

    def __len__(self):
        return len(self.registros)


_cinta_actual = Cinta()


def cinta_actual():
    """Retorna la cinta activa"""
    return _cinta_actual


def nueva_cinta():
    """
    Reemplaza la cinta activa por una vacia

    Returns:
        Cinta: La nueva cinta activa
    """
    global _cinta_actual
    _cinta_actual = Cinta()
    return _cinta_actual


class Tensor:
    """
    Arreglo denso float64 con seguimiento de gradiente en modo reverso
    """

    def __init__(self, valores, requires_grad=False, nombre=None):
        self.data = np.array(valores, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.nombre = nombre
        self.id = next(_contador_nodos)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        etiqueta = f", nombre={self.nombre}" if self.nombre else ""
        return f"Tensor(shape={self.shape}{etiqueta})"

    def __add__(self, otro):
        return add(self, otro)

    def __radd__(self, otro):
        return add(otro, self)

    def __sub__(self, otro):
        return sub(self, otro)

    def __rsub__(self, otro):
        return sub(otro, self)

    def __mul__(self, otro):
        return mul(self, otro)

    def __rmul__(self, otro):
        return mul(otro, self)

    def __truediv__(self, otro):
        return div(self, otro)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, otro):
        return matmul(self, otro)

    def __getitem__(self, clave):
        return indexar(self, clave)

    @property
    def T(self):
        return transpose(self)


def como_tensor(x):
    """Convierte escalares y arreglos en Tensor constante"""
    return x if isinstance(x, Tensor) else Tensor(x)


def _nuevo(valores, entradas, retro):
    """Crea la salida de una primitiva y la registra si alguna entrada requiere gradiente"""
    requiere = any(t.requires_grad for t in entradas)
    salida = Tensor(valores, requires_grad=requiere)
    if requiere:
        _cinta_actual.registrar(salida, tuple(entradas), retro)
    return salida


def _desdifundir(grad, forma):
    """Suma el gradiente sobre los ejes difundidos hasta recuperar la forma original"""
    while grad.ndim > len(forma):
        grad = grad.sum(axis=0)
    for eje, tam in enumerate(forma):
        if tam == 1 and grad.shape[eje] != 1:
            grad = grad.sum(axis=eje, keepdims=True)
    return grad


def _verificar_difusion(a, b, operacion):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ErrorForma(f"{operacion}: formas incompatibles {a.shape} y {b.shape}")


# ---------------------------------------------------------------------------
# Primitivas elementales
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = como_tensor(a), como_tensor(b)
    _verificar_difusion(a, b, "add")

    def retro(g):
        return _desdifundir(g, a.shape), _desdifundir(g, b.shape)

    return _nuevo(a.data + b.data, (a, b), retro)


def sub(a, b):
    a, b = como_tensor(a), como_tensor(b)
    _verificar_difusion(a, b, "sub")

    def retro(g):
        return _desdifundir(g, a.shape), _desdifundir(-g, b.shape)

    return _nuevo(a.data - b.data, (a, b), retro)


def mul(a, b):
    a, b = como_tensor(a), como_tensor(b)
    _verificar_difusion(a, b, "mul")

    def retro(g):
        return _desdifundir(g * b.data, a.shape), _desdifundir(g * a.data, b.shape)

    return _nuevo(a.data * b.data, (a, b), retro)


def div(a, b):
    a, b = como_tensor(a), como_tensor(b)
    _verificar_difusion(a, b, "div")

    def retro(g):
        return (
            _desdifundir(g / b.data, a.shape),
            _desdifundir(-g * a.data / (b.data * b.data), b.shape),
        )

    return _nuevo(a.data / b.data, (a, b), retro)


def matmul(a, b):
    a, b = como_tensor(a), como_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ErrorForma(f"matmul: formas incompatibles {a.shape} y {b.shape}")

    def retro(g):
        return g @ b.data.T, a.data.T @ g

    return _nuevo(a.data @ b.data, (a, b), retro)


def transpose(x):
    if x.ndim != 2:
        raise ErrorForma(f"transpose: se espera 2D, forma {x.shape}")

    def retro(g):
        return (g.T,)

    return _nuevo(x.data.T, (x,), retro)


def reshape(x, forma):
    forma_original = x.shape
    try:
        valores = x.data.reshape(forma)
    except ValueError:
        raise ErrorForma(f"reshape: {forma_original} -> {forma}")

    def retro(g):
        return (g.reshape(forma_original),)

    return _nuevo(valores, (x,), retro)


def relu(x):
    mascara = x.data > 0

    def retro(g):
        return (g * mascara,)

    return _nuevo(np.where(mascara, x.data, 0.0), (x,), retro)


def abs(x):
    signo = np.sign(x.data)

    def retro(g):
        return (g * signo,)

    return _nuevo(np.abs(x.data), (x,), retro)


def square(x):
    def retro(g):
        return (2.0 * g * x.data,)

    return _nuevo(x.data * x.data, (x,), retro)


def sqrt(x):
    valores = np.sqrt(x.data)

    def retro(g):
        return (g * 0.5 / valores,)

    return _nuevo(valores, (x,), retro)


def exp(x):
    valores = np.exp(x.data)

    def retro(g):
        return (g * valores,)

    return _nuevo(valores, (x,), retro)


def log(x):
    def retro(g):
        return (g / x.data,)

    return _nuevo(np.log(x.data), (x,), retro)


def sigmoid(x):
    valores = 1.0 / (1.0 + np.exp(-x.data))

    def retro(g):
        return (g * valores * (1.0 - valores),)

    return _nuevo(valores, (x,), retro)


# ---------------------------------------------------------------------------
# Reducciones y normalizaciones
# ---------------------------------------------------------------------------

def sum(x, axis=None, keepdims=False):
    forma = x.shape

    def retro(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, forma).copy(),)

    return _nuevo(x.data.sum(axis=axis, keepdims=keepdims), (x,), retro)


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis=-1):
    desplazado = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(desplazado)
    valores = e / e.sum(axis=axis, keepdims=True)

    def retro(g):
        return (valores * (g - (g * valores).sum(axis=axis, keepdims=True)),)

    return _nuevo(valores, (x,), retro)


def log_softmax(x, axis=-1):
    desplazado = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(desplazado).sum(axis=axis, keepdims=True))
    valores = desplazado - lse
    probs = np.exp(valores)

    def retro(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _nuevo(valores, (x,), retro)


def layer_norm(x, escala=None, desplazamiento=None, eps=1e-12):
    """
    Normalizacion sobre el ultimo eje, con escala y desplazamiento aprendidos opcionales
    """
    media = x.data.mean(axis=-1, keepdims=True)
    centrado = x.data - media
    var = (centrado * centrado).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normalizado = centrado * inv
    n = x.shape[-1]

    def retro(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * normalizado).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - normalizado * gxm),)

    salida = _nuevo(normalizado, (x,), retro)
    if escala is not None:
        if escala.shape[-1] != n:
            raise ErrorForma(f"layer_norm: escala {escala.shape} para ultimo eje {n}")
        salida = mul(salida, escala)
    if desplazamiento is not None:
        salida = add(salida, desplazamiento)
    return salida


# ---------------------------------------------------------------------------
# Estructura: concatenar, dividir, indexar, enmascarar
# ---------------------------------------------------------------------------

def concat(tensores, axis=0):
    tensores = [como_tensor(t) for t in tensores]
    try:
        valores = np.concatenate([t.data for t in tensores], axis=axis)
    except ValueError as error:
        raise ErrorForma(f"concat: {error}")
    cortes = np.cumsum([t.shape[axis] for t in tensores])[:-1]

    def retro(g):
        return tuple(np.split(g, cortes, axis=axis))

    return _nuevo(valores, tensores, retro)


def split(x, tamanos, axis=0):
    """Divide x en trozos consecutivos de los tamanos dados"""
    if np.sum(tamanos) != x.shape[axis]:
        raise ErrorForma(f"split: tamanos {list(tamanos)} no suman {x.shape[axis]}")
    partes = []
    inicio = 0
    for tam in tamanos:
        clave = [slice(None)] * x.ndim
        clave[axis] = slice(inicio, inicio + tam)
        partes.append(indexar(x, tuple(clave)))
        inicio += tam
    return partes


def indexar(x, clave):
    """Indexado estilo numpy; el gradiente se acumula con np.add.at"""
    valores = x.data[clave]

    def retro(g):
        total = np.zeros_like(x.data)
        np.add.at(total, clave, g)
        return (total,)

    return _nuevo(np.array(valores), (x,), retro)


def gather_rows(x, indices):
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < -x.shape[0] or indices.max() >= x.shape[0]):
        raise ErrorForma(f"gather_rows: indices fuera de rango para {x.shape[0]} filas")
    return indexar(x, indices)


def enmascarar(x, mascara):
    """Reemplaza por -inf las posiciones donde mascara es False"""
    mascara = np.asarray(mascara, dtype=bool)
    if mascara.shape != x.shape:
        raise ErrorForma(f"enmascarar: mascara {mascara.shape} para tensor {x.shape}")

    def retro(g):
        return (np.where(mascara, g, 0.0),)

    return _nuevo(np.where(mascara, x.data, -np.inf), (x,), retro)


def dropout(x, tasa, rng):
    """Dropout de Bernoulli con semilla; tasa 0 es la identidad"""
    if tasa <= 0.0:
        return x
    conservar = rng.random(x.shape) >= tasa
    factor = conservar / (1.0 - tasa)

    def retro(g):
        return (g * factor,)

    return _nuevo(x.data * factor, (x,), retro)


def stop_gradient(x):
    """
    Copia los valores de x sin conexion al grafo

    Los valores son identicos bit a bit; ningun ancestro de x recibe gradiente
    por este camino.
    """
    return Tensor(como_tensor(x).data, requires_grad=False)


# ---------------------------------------------------------------------------
# Retropropagacion
# ---------------------------------------------------------------------------

def backward(perdida, parametros=None):
    """
    Retropropaga desde una perdida escalar sobre la cinta actual

    Args:
        perdida (Tensor): Escalar producido en la cinta actual
        parametros (list): Tensores hoja cuyo gradiente se materializa; los
            no alcanzables reciben gradiente cero

    Returns:
        dict: id de nodo -> Tensor gradiente
    """
    if perdida.size != 1:
        raise ErrorGrafo(f"backward requiere una perdida escalar, forma {perdida.shape}")
    cinta = _cinta_actual
    if cinta.consumida:
        raise ErrorGrafo("backward ya se ejecuto sobre esta cinta; reevaluar antes de repetir")
    if perdida.requires_grad and perdida.id not in cinta.nodos:
        raise ErrorGrafo("la perdida no pertenece a la cinta actual")

    grads = {perdida.id: np.ones_like(perdida.data)}
    for salida, entradas, retro in reversed(cinta.registros):
        g = grads.get(salida.id)
        if g is None:
            continue
        for entrada, contribucion in zip(entradas, retro(g)):
            if contribucion is None or not entrada.requires_grad:
                continue
            previo = grads.get(entrada.id)
            grads[entrada.id] = contribucion if previo is None else previo + contribucion
    cinta.consumida = True

    if parametros is None:
        return {nodo: Tensor(g) for nodo, g in grads.items()}

    mapa = {}
    for p in parametros:
        g = grads.get(p.id)
        p.grad = np.zeros_like(p.data) if g is None else g.reshape(p.shape)
        mapa[p.id] = Tensor(p.grad)
    return mapa


def comprobar_gradiente(funcion, entradas, eps=1e-5):
    """
    Compara gradientes en modo reverso con diferencias centrales

    Args:
        funcion (callable): Recibe la lista de entradas y retorna un escalar
        entradas (list): Tensores con requires_grad=True
        eps (float): Paso de la diferencia central

    Returns:
        float: Maximo error relativo |a - n| / max(|a|, |n|, 1e-6)
    """
    nueva_cinta()
    analiticos = backward(funcion(entradas), entradas)

    peor = 0.0
    for t in entradas:
        analitico = analiticos[t.id].data
        plano = t.data.reshape(-1)
        for i in range(plano.size):
            original = plano[i]
            plano[i] = original + eps
            nueva_cinta()
            mas = float(funcion(entradas).data)
            plano[i] = original - eps
            nueva_cinta()
            menos = float(funcion(entradas).data)
            plano[i] = original
            numerico = (mas - menos) / (2.0 * eps)
            a = analitico.reshape(-1)[i]
            denom = max(np.abs(a), np.abs(numerico), 1e-6)
            peor = max(peor, np.abs(a - numerico) / denom)
    nueva_cinta()
    return peor
