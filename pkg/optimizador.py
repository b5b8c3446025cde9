# optimizador.py
"""
Optimizador Adam y checkpoints (manifiesto JSON + binario float64 little-endian)
"""

import json
import os

import numpy as np

from config import ErrorConfiguracion, ErrorForma


def adam_step(params, grads, estado, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    Un paso de Adam con correccion de sesgo, en sitio sobre params

    Args:
        params (list): Tensores parametro
        grads (list): Arreglos gradiente, uno por parametro (None = cero)
        estado (dict): {'paso': int, 'm': list, 'v': list}; se inicializa si esta vacio
        lr, beta1, beta2, eps (float): Hiperparametros de Adam

    Returns:
        dict: Estado actualizado
    """
    if not estado:
        estado['paso'] = 0
        estado['m'] = [np.zeros_like(p.data) for p in params]
        estado['v'] = [np.zeros_like(p.data) for p in params]

    estado['paso'] += 1
    t = estado['paso']
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        estado['m'][i] = beta1 * estado['m'][i] + (1.0 - beta1) * g
        estado['v'][i] = beta2 * estado['v'][i] + (1.0 - beta2) * (g * g)
        m_hat = estado['m'][i] / (1.0 - beta1 ** t)
        v_hat = estado['v'][i] / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return estado


class Adam:
    """
    Envoltura con estado sobre adam_step
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.estado = {}

    def step(self, grads=None):
        if grads is None:
            grads = [p.grad for p in self.params]
        adam_step(self.params, grads, self.estado, self.lr, self.beta1, self.beta2, self.eps)


def guardar_checkpoint(parametros_nombrados, ruta_base, metadatos=None):
    """
    Guarda parametros como manifiesto JSON y binario float64 little-endian

    Args:
        parametros_nombrados (list): Pares (nombre, Tensor)
        ruta_base (str): Ruta sin extension; se crean .json y .bin
        metadatos (dict): Informacion adicional para el manifiesto

    Returns:
        str: Ruta del manifiesto
    """
    directorio = os.path.dirname(ruta_base)
    if directorio:
        os.makedirs(directorio, exist_ok=True)

    entradas = []
    desplazamiento = 0
    with open(f"{ruta_base}.bin", 'wb') as binario:
        for nombre, tensor in parametros_nombrados:
            crudo = np.ascontiguousarray(tensor.data, dtype='<f8').tobytes()
            binario.write(crudo)
            entradas.append({
                'nombre': nombre,
                'forma': list(tensor.shape),
                'desplazamiento': desplazamiento,
                'bytes': len(crudo),
            })
            desplazamiento += len(crudo)

    manifiesto = {
        'formato': 'dmad-checkpoint',
        'version': 1,
        'binario': os.path.basename(f"{ruta_base}.bin"),
        'parametros': entradas,
        'metadatos': metadatos or {},
    }
    with open(f"{ruta_base}.json", 'w', encoding='utf-8') as archivo:
        json.dump(manifiesto, archivo, indent=2, sort_keys=True)
    return f"{ruta_base}.json"


def leer_manifiesto(ruta_base):
    """Lee el manifiesto JSON de un checkpoint"""
    try:
        with open(f"{ruta_base}.json", 'r', encoding='utf-8') as archivo:
            return json.load(archivo)
    except FileNotFoundError:
        raise ErrorConfiguracion(f"Checkpoint no encontrado: {ruta_base}.json")


def cargar_checkpoint(parametros_nombrados, ruta_base):
    """
    Carga un checkpoint sobre los parametros existentes (en sitio)

    Raises:
        ErrorForma: Si nombres o formas no coinciden con la arquitectura
    """
    manifiesto = leer_manifiesto(ruta_base)
    directorio = os.path.dirname(ruta_base)
    with open(os.path.join(directorio, manifiesto['binario']), 'rb') as binario:
        crudo = binario.read()

    guardados = {e['nombre']: e for e in manifiesto['parametros']}
    nombres = [nombre for nombre, _ in parametros_nombrados]
    faltantes = sorted(set(nombres) - set(guardados))
    sobrantes = sorted(set(guardados) - set(nombres))
    if faltantes or sobrantes:
        raise ErrorForma(f"Checkpoint incompatible: faltan {faltantes[:5]}, sobran {sobrantes[:5]}")

    for nombre, tensor in parametros_nombrados:
        entrada = guardados[nombre]
        if tuple(entrada['forma']) != tensor.shape:
            raise ErrorForma(f"Forma incompatible para {nombre}: {entrada['forma']} vs {list(tensor.shape)}")
        inicio = entrada['desplazamiento']
        valores = np.frombuffer(crudo[inicio:inicio + entrada['bytes']], dtype='<f8')
        tensor.data[...] = valores.reshape(tensor.shape)
    return manifiesto.get('metadatos', {})
