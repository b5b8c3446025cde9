# atribucion.py
"""
Analisis de concentracion de atribucion

Importancia por permutacion de cada canal de las consultas de objeto sobre el
logit de la categoria verdadera, por etapa, y su coeficiente de Gini.
"""

import numpy as np
import pandas as pd

import autograd as ag
from config import ErrorMetrica
from decodificador_semantico import CANALES_CAJA, CATEGORIAS_CAJA
from entrenamiento import emparejar_frame
from rastreador import ConjuntoRastreo, PoliticaPropagacion, actualizar_rastreo, propagate, select_positives

LOTE_MINIMO = 8
INICIO_LOGITS = 8


def gini(valores):
    """
    Coeficiente de Gini de un vector no negativo

    Returns:
        float: 0 para un vector uniforme (o todo cero), (n-1)/n para una masa puntual
    """
    x = np.sort(np.abs(np.asarray(valores, dtype=np.float64)))
    n = len(x)
    total = x.sum()
    if n == 0 or total == 0.0:
        return 0.0
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * x) / (n * total))


def logits_clase(cabeza, consultas, categorias):
    """Logit de la categoria indicada por fila a traves de la cabeza de cajas"""
    ag.nueva_cinta()
    salida = cabeza(ag.Tensor(consultas)).data
    ag.nueva_cinta()
    logits = salida[:, INICIO_LOGITS:CANALES_CAJA]
    return logits[np.arange(len(categorias)), categorias]


def importancia_permutacion(cabeza, consultas, categorias, n_permutaciones=5, semilla=0):
    """
    Cambio absoluto medio del logit verdadero al permutar cada canal entre el lote

    Args:
        cabeza (MLP): Cabeza de cajas
        consultas (ndarray): Consultas positivas [B, d]
        categorias (ndarray): Categoria verdadera de cada consulta [B]
        n_permutaciones (int): Repeticiones promediadas por canal

    Raises:
        ErrorMetrica: Si el lote tiene menos de 8 consultas
    """
    consultas = np.asarray(consultas, dtype=np.float64)
    categorias = np.asarray(categorias, dtype=np.int64)
    if len(consultas) < LOTE_MINIMO:
        raise ErrorMetrica(f"lote de {len(consultas)} consultas positivas; se requieren al menos {LOTE_MINIMO}")
    rng = np.random.default_rng(semilla)
    base = logits_clase(cabeza, consultas, categorias)
    importancias = np.zeros(consultas.shape[1])
    for j in range(consultas.shape[1]):
        for _ in range(n_permutaciones):
            permutadas = consultas.copy()
            permutadas[:, j] = consultas[rng.permutation(len(consultas)), j]
            importancias[j] += np.abs(logits_clase(cabeza, permutadas, categorias) - base).mean()
    return importancias / n_permutaciones


def recolectar_positivas(modelo, episodios, cfg):
    """
    Consultas de objeto finales emparejadas con verdad y su categoria, recorriendo
    cada episodio con propagacion en modo entrenamiento

    Returns:
        tuple: (consultas [B, d], categorias [B])
    """
    politica = PoliticaPropagacion.desde_configuracion(cfg, 'training')
    consultas, categorias = [], []
    for episodio in episodios:
        conjunto = ConjuntoRastreo()
        for t, frame in enumerate(episodio.frames):
            ag.nueva_cinta()
            iniciales = propagate(conjunto, *modelo.consultas_frescas(), *modelo.normas_propagacion())
            salida = modelo.procesar_frame(episodio.tokens[t], iniciales, frame.ego.posicion,
                                           multimodal=False, plan=False)
            emparejamiento = emparejar_frame(salida, frame, cfg)
            objetos = {o.id: o for o in frame.objetos}
            q_obj = salida.final.q_obj.data
            for q, gt in emparejamiento.pares:
                consultas.append(q_obj[q].copy())
                categorias.append(CATEGORIAS_CAJA.index(objetos[gt].categoria))
            confianzas = salida.final.cajas.confianza
            positivos = select_positives(confianzas, 'training', emparejamiento)
            actualizar_rastreo(conjunto, iniciales, positivos, ag.stop_gradient(salida.final.q_obj),
                               None if salida.q_mt is None or modelo.movimiento is None
                               else ag.stop_gradient(salida.q_mt),
                               salida.referencias_siguientes(), confianzas, politica,
                               emparejamiento.id_verdad_por_consulta(len(confianzas)))
    ag.nueva_cinta()
    d = modelo.cfg['modelo']['d']
    return np.array(consultas).reshape(-1, d), np.array(categorias, dtype=np.int64)


class ReporteAtribucion:
    """Importancias por etapa, su Gini y la diferencia etapa1 - etapa2"""

    def __init__(self, importancias, arquitectura='divided'):
        self.importancias = {etapa: np.asarray(v, dtype=np.float64) for etapa, v in importancias.items()}
        self.arquitectura = arquitectura
        self.gini = {etapa: gini(v) for etapa, v in self.importancias.items()}
        self.diferencia = None
        if 1 in self.importancias and 2 in self.importancias:
            self.diferencia = self.importancias[1] - self.importancias[2]

    @property
    def delta_gini(self):
        return self.gini.get(2, 0.0) - self.gini.get(1, 0.0)

    def a_dataframe(self):
        filas = []
        d = len(next(iter(self.importancias.values())))
        for canal in range(d):
            fila = {'canal': canal}
            for etapa, valores in sorted(self.importancias.items()):
                fila[f'importancia_etapa{etapa}'] = valores[canal]
            if self.diferencia is not None:
                fila['diferencia'] = self.diferencia[canal]
            filas.append(fila)
        return pd.DataFrame(filas)

    def guardar_csv(self, ruta):
        self.a_dataframe().to_csv(ruta, index=False, float_format='%.6f')
        return ruta

    def resumen(self):
        return {'arquitectura': self.arquitectura,
                **{f'gini_etapa{e}': g for e, g in sorted(self.gini.items())},
                'delta_gini': self.delta_gini}


def attribution(modelo_etapa1, modelo_etapa2, episodios, n_permutaciones, cfg, semilla=0):
    """
    Reporte de atribucion de los modelos de ambas etapas de una misma corrida

    Returns:
        ReporteAtribucion
    """
    importancias = {}
    for etapa, modelo in ((1, modelo_etapa1), (2, modelo_etapa2)):
        consultas, categorias = recolectar_positivas(modelo, episodios, cfg)
        importancias[etapa] = importancia_permutacion(modelo.semantico.cabeza_cajas, consultas, categorias,
                                                      n_permutaciones, semilla)
    return ReporteAtribucion(importancias, modelo_etapa2.arquitectura)
