# metricas.py
"""
Metricas de deteccion, rastreo, mapa, prediccion y planificacion

Todas operan sobre volcados de tracks (lista de frames con detecciones) y la
verdad del episodio expresada en el mismo formato de diccionarios, de modo que
evaluar dos veces los mismos volcados produce reportes identicos byte a byte.
"""

import math

import motmetrics as mm
import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from config import ConfiguracionSistema, ErrorMetrica
from simulador import EGO_ANCHO, EGO_LARGO, cajas_intersectan, esquinas_caja

CATEGORIAS_OBJETO = ('vehicle', 'pedestrian')
CATEGORIAS_MAPA = ('lane-divider', 'crossing', 'boundary')
PUNTOS_RECALL = np.linspace(0.0, 1.0, 101)
PASOS_PLAN = (2, 4, 6)          # 1 s, 2 s, 3 s con dt = 0.5
ESQUEMA_REPORTE = 1

COLUMNAS_REPORTE = [
    'esquema', 'hash', 'mAP', 'mAVE', 'MOTA', 'IDS', 'map_AP',
    'EPA', 'minADE', 'minFDE',
    'L2_1s', 'L2_2s', 'L2_3s', 'l2_avg',
    'colision_1s', 'colision_2s', 'colision_3s', 'collision_avg',
]


# ---------------------------------------------------------------------------
# Utilidades de emparejamiento
# ---------------------------------------------------------------------------

def _centro(registro):
    return np.asarray(registro['caja'][:2], dtype=np.float64)


def _emparejar_voraz(predicciones, verdad, umbral):
    """
    Emparejamiento voraz por confianza descendente a distancia de centro

    Returns:
        list: Por prediccion, indice de verdad emparejado o -1
    """
    orden = sorted(range(len(predicciones)), key=lambda i: (-predicciones[i]['confianza'], i))
    libres = set(range(len(verdad)))
    resultado = [-1] * len(predicciones)
    for i in orden:
        mejor, distancia_mejor = -1, math.inf
        for j in libres:
            distancia = float(np.linalg.norm(_centro(predicciones[i]) - _centro(verdad[j])))
            if distancia <= umbral and distancia < distancia_mejor:
                mejor, distancia_mejor = j, distancia
        if mejor >= 0:
            libres.discard(mejor)
            resultado[i] = mejor
    return resultado


def precision_promedio(aciertos, confianzas, total_verdad):
    """
    AP interpolada en 101 puntos de recall

    Args:
        aciertos (list): 1 si la prediccion es TP, 0 si es FP
        confianzas (list): Confianza de cada prediccion
        total_verdad (int): Numero de objetos de verdad

    Returns:
        float: AP en [0, 1]
    """
    if total_verdad == 0:
        raise ErrorMetrica("AP indefinida sin objetos de verdad")
    if not aciertos:
        return 0.0
    orden = np.argsort(-np.asarray(confianzas, dtype=np.float64), kind='stable')
    tp = np.cumsum(np.asarray(aciertos, dtype=np.float64)[orden])
    fp = np.cumsum(1.0 - np.asarray(aciertos, dtype=np.float64)[orden])
    recall = tp / total_verdad
    precision = tp / np.maximum(tp + fp, 1e-12)
    interpolada = np.zeros_like(PUNTOS_RECALL)
    for k, r in enumerate(PUNTOS_RECALL):
        alcanzada = precision[recall >= r - 1e-12]
        interpolada[k] = alcanzada.max() if len(alcanzada) else 0.0
    return float(interpolada.mean())


# ---------------------------------------------------------------------------
# Deteccion
# ---------------------------------------------------------------------------

def _emparejar_categoria(predicciones, verdad, categoria, umbral):
    """(aciertos, confianzas, total_verdad, pares TP) de una categoria sobre todos los frames"""
    aciertos, confianzas, pares = [], [], []
    total = 0
    for frame_pred, frame_gt in zip(predicciones, verdad):
        preds = [d for d in frame_pred['detecciones'] if d['categoria'] == categoria]
        gts = [o for o in frame_gt['objetos'] if o['categoria'] == categoria]
        total += len(gts)
        emparejados = _emparejar_voraz(preds, gts, umbral)
        for d, j in zip(preds, emparejados):
            aciertos.append(1 if j >= 0 else 0)
            confianzas.append(d['confianza'])
            if j >= 0:
                pares.append((d, gts[j]))
    return aciertos, confianzas, total, pares


def detection_metrics(predicciones, verdad, umbrales=(0.5, 1.0, 2.0, 4.0), umbral_velocidad=2.0):
    """
    mAP sobre umbrales de distancia de centro y categorias; mAVE en los TP a 2 m

    Returns:
        dict: {'mAP', 'mAVE', 'ap'}; mAP y mAVE son None si no hay verdad
    """
    categorias = [c for c in CATEGORIAS_OBJETO
                  if any(o['categoria'] == c for frame in verdad for o in frame['objetos'])]
    if not categorias:
        return {'mAP': None, 'mAVE': None, 'ap': {}}

    ap = {}
    for categoria in categorias:
        for umbral in umbrales:
            aciertos, confianzas, total, _ = _emparejar_categoria(predicciones, verdad, categoria, umbral)
            ap[(categoria, umbral)] = precision_promedio(aciertos, confianzas, total)

    errores = []
    for categoria in categorias:
        _, _, _, pares = _emparejar_categoria(predicciones, verdad, categoria, umbral_velocidad)
        for d, o in pares:
            if d.get('velocidad') is not None:
                errores.append(float(np.linalg.norm(np.asarray(d['velocidad']) - np.asarray(o['velocidad']))))

    return {
        'mAP': float(np.mean(list(ap.values()))),
        'mAVE': float(np.mean(errores)) if errores else None,
        'ap': ap,
    }


# ---------------------------------------------------------------------------
# Rastreo
# ---------------------------------------------------------------------------

def tracking_metrics(predicciones, verdad, umbral=2.0):
    """
    MOTA e IDS estilo CLEAR con emparejamiento a distancia de centro

    Returns:
        dict: {'MOTA', 'IDS'}; MOTA es None si no hay verdad
    """
    acumulador = mm.MOTAccumulator(auto_id=True)
    for frame_pred, frame_gt in zip(predicciones, verdad):
        episodio = frame_gt.get('episodio', 0)
        gt_ids = [f"{episodio}:{o['id']}" for o in frame_gt['objetos']]
        hyp_ids = [f"{episodio}:{d['id']}" for d in frame_pred['detecciones']]
        if gt_ids and hyp_ids:
            distancias = mm.distances.norm2squared_matrix(
                np.array([_centro(o) for o in frame_gt['objetos']]),
                np.array([_centro(d) for d in frame_pred['detecciones']]),
                max_d2=umbral * umbral)
        else:
            distancias = np.empty((len(gt_ids), len(hyp_ids)))
        acumulador.update(gt_ids, hyp_ids, distancias)

    resumen = mm.metrics.create().compute(
        acumulador, metrics=['mota', 'num_switches', 'num_objects'], name='rastreo')
    objetos = int(resumen['num_objects'].iloc[0])
    ids = int(resumen['num_switches'].iloc[0])
    if objetos == 0:
        return {'MOTA': None, 'IDS': ids}
    return {'MOTA': max(0.0, float(resumen['mota'].iloc[0])), 'IDS': ids}


# ---------------------------------------------------------------------------
# Mapa
# ---------------------------------------------------------------------------

def distancia_chamfer(a, b):
    """Media simetrica de distancias al vecino mas cercano entre dos polilineas"""
    d = cdist(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def map_metrics(predicciones, verdad, umbrales=(0.5, 1.0, 1.5)):
    """
    AP de Chamfer por categoria de polilinea y umbral

    Returns:
        dict: {'map_AP', 'ap'}; map_AP es None si no hay polilineas de verdad
    """
    categorias = [c for c in CATEGORIAS_MAPA
                  if any(p['categoria'] == c for frame in verdad for p in frame['mapa'])]
    if not categorias:
        return {'map_AP': None, 'ap': {}}
    ap = {}
    for categoria in categorias:
        for umbral in umbrales:
            aciertos, confianzas, total = [], [], 0
            for frame_pred, frame_gt in zip(predicciones, verdad):
                preds = [p for p in frame_pred['mapa'] if p['categoria'] == categoria]
                gts = [p for p in frame_gt['mapa'] if p['categoria'] == categoria]
                total += len(gts)
                libres = set(range(len(gts)))
                for p in sorted(preds, key=lambda p: -p['confianza']):
                    candidatos = [(distancia_chamfer(p['vertices'], gts[j]['vertices']), j) for j in sorted(libres)]
                    candidatos = [(d, j) for d, j in candidatos if d <= umbral]
                    if candidatos:
                        libres.discard(min(candidatos)[1])
                        aciertos.append(1)
                    else:
                        aciertos.append(0)
                    confianzas.append(p['confianza'])
            ap[(categoria, umbral)] = precision_promedio(aciertos, confianzas, total)
    return {'map_AP': float(np.mean(list(ap.values()))), 'ap': ap}


# ---------------------------------------------------------------------------
# Prediccion
# ---------------------------------------------------------------------------

def _modos(deteccion):
    """Trayectorias futuras [K, T, 2] de una deteccion (multimodal o, si falta, unimodal)"""
    if deteccion.get('multimodal') is not None:
        return np.asarray(deteccion['multimodal'], dtype=np.float64)
    if deteccion.get('futuro_unimodal') is not None:
        return np.asarray(deteccion['futuro_unimodal'], dtype=np.float64)[None]
    return None


def prediction_metrics(predicciones, verdad, alfa=0.5, c_epa=2.0, umbral=2.0):
    """
    EPA, minADE y minFDE sobre detecciones verdaderas positivas

    Solo cuentan los objetos de verdad con al menos un paso futuro; una
    prediccion emparejada con un objeto excluido no es acierto ni FP.

    Returns:
        dict: {'EPA', 'minADE', 'minFDE'}
    """
    aciertos = falsos = total_verdad = 0
    ades, fdes = [], []
    for frame_pred, frame_gt in zip(predicciones, verdad):
        for categoria in CATEGORIAS_OBJETO:
            preds = [d for d in frame_pred['detecciones'] if d['categoria'] == categoria]
            gts = [o for o in frame_gt['objetos'] if o['categoria'] == categoria]
            con_futuro = [len(o['futuro']) > 0 for o in gts]
            total_verdad += sum(con_futuro)
            for d, j in zip(preds, _emparejar_voraz(preds, gts, umbral)):
                if j < 0:
                    falsos += 1
                    continue
                if not con_futuro[j]:
                    continue
                futuro = np.asarray(gts[j]['futuro'], dtype=np.float64)
                modos = _modos(d)
                if modos is None:
                    continue
                pasos = min(len(futuro), modos.shape[1])
                error = np.linalg.norm(modos[:, :pasos] - futuro[None, :pasos], axis=-1)
                ade = float(error.mean(axis=1).min())
                ades.append(ade)
                fdes.append(float(error[:, -1].min()))
                if ade < c_epa:
                    aciertos += 1

    epa = None if total_verdad == 0 else max(0.0, (aciertos - alfa * falsos) / total_verdad)
    return {
        'EPA': epa,
        'minADE': float(np.mean(ades)) if ades else None,
        'minFDE': float(np.mean(fdes)) if fdes else None,
    }


# ---------------------------------------------------------------------------
# Planificacion
# ---------------------------------------------------------------------------

def _rumbos_plan(plan, posicion, rumbo):
    """Rumbo de cada waypoint segun su desplazamiento; sin desplazamiento se conserva el previo"""
    rumbos = []
    previo_p, previo_r = np.asarray(posicion, dtype=np.float64), float(rumbo)
    for punto in plan:
        delta = punto - previo_p
        if np.hypot(*delta) > 1e-6:
            previo_r = math.atan2(delta[1], delta[0])
        rumbos.append(previo_r)
        previo_p = punto
    return rumbos


def colision_plan(plan, posicion_ego, rumbo_ego, objetos_futuros, pasos):
    """
    Verdadero si la caja del ego en algun waypoint 1..pasos toca una caja de
    objeto del paso correspondiente

    Args:
        objetos_futuros (list): Por paso k (desde 1), lista de cajas de 7 parametros o None
    """
    plan = np.asarray(plan, dtype=np.float64)
    rumbos = _rumbos_plan(plan, posicion_ego, rumbo_ego)
    for k in range(min(pasos, len(plan))):
        cajas = objetos_futuros[k] if k < len(objetos_futuros) else None
        if not cajas:
            continue
        ego = esquinas_caja(plan[k], EGO_ANCHO, EGO_LARGO, rumbos[k])
        for caja in cajas:
            if cajas_intersectan(ego, esquinas_caja(caja[:2], caja[3], caja[5], caja[6])):
                return True
    return False


def planning_metrics(predicciones, verdad):
    """
    L2 a 1/2/3 s contra el plan experto y tasa de colision (%) por horizonte

    Raises:
        ErrorMetrica: Si algun plan cubre menos de 3 s
    """
    l2 = {p: [] for p in PASOS_PLAN}
    colisiones = {p: [] for p in PASOS_PLAN}
    for i, (frame_pred, frame_gt) in enumerate(zip(predicciones, verdad)):
        if frame_pred.get('plan') is None or frame_gt.get('plan_experto') is None:
            continue
        plan = np.asarray(frame_pred['plan'], dtype=np.float64)
        experto = np.asarray(frame_gt['plan_experto'], dtype=np.float64)
        if len(plan) < PASOS_PLAN[-1] or len(experto) < PASOS_PLAN[-1]:
            raise ErrorMetrica(f"plan de {len(plan)} pasos; se requieren al menos {PASOS_PLAN[-1]} (3 s)")
        futuros = []
        for k in range(1, PASOS_PLAN[-1] + 1):
            siguiente = verdad[i + k] if i + k < len(verdad) else None
            if siguiente is not None and (siguiente['frame'] != frame_gt['frame'] + k
                                          or siguiente.get('episodio') != frame_gt.get('episodio')):
                siguiente = None
            futuros.append(None if siguiente is None else [o['caja'] for o in siguiente['objetos']])
        for p in PASOS_PLAN:
            l2[p].append(float(np.linalg.norm(plan[p - 1] - experto[p - 1])))
            colision = colision_plan(plan, frame_gt['ego']['posicion'], frame_gt['ego']['rumbo'], futuros, p)
            colisiones[p].append(100.0 if colision else 0.0)

    if not l2[PASOS_PLAN[0]]:
        return {}
    resultado = {}
    for p, nombre in zip(PASOS_PLAN, ('1s', '2s', '3s')):
        resultado[f'L2_{nombre}'] = float(np.mean(l2[p]))
        resultado[f'colision_{nombre}'] = float(np.mean(colisiones[p]))
    resultado['l2_avg'] = float(np.mean([resultado[f'L2_{n}'] for n in ('1s', '2s', '3s')]))
    resultado['collision_avg'] = float(np.mean([resultado[f'colision_{n}'] for n in ('1s', '2s', '3s')]))
    return resultado


# ---------------------------------------------------------------------------
# Reporte
# ---------------------------------------------------------------------------

class ReporteMetricas:
    """
    Reporte de metricas de una corrida, serializable a CSV de esquema fijo
    """

    def __init__(self, valores=None, hash_config=''):
        self.valores = dict(valores or {})
        self.valores['esquema'] = ESQUEMA_REPORTE
        self.valores['hash'] = hash_config

    def __getitem__(self, clave):
        return self.valores.get(clave)

    def a_fila(self):
        return {columna: self.valores.get(columna) for columna in COLUMNAS_REPORTE}

    def a_dataframe(self):
        return pd.DataFrame([self.a_fila()], columns=COLUMNAS_REPORTE)

    def guardar_csv(self, ruta):
        self.a_dataframe().to_csv(ruta, index=False, float_format='%.6f')
        return ruta

    @classmethod
    def desde_csv(cls, ruta):
        fila = pd.read_csv(ruta).iloc[0].to_dict()
        valores = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in fila.items()}
        return cls(valores, valores.get('hash', ''))

    def mostrar(self):
        print("\n" + "=" * 60)
        print("REPORTE DE METRICAS")
        print("=" * 60)
        for columna in COLUMNAS_REPORTE[2:]:
            valor = self.valores.get(columna)
            texto = "-" if valor is None else (f"{valor:.4f}" if isinstance(valor, float) else str(valor))
            print(f"  {columna:<14} {texto}")


def construir_reporte(predicciones, verdad, cfg, hash_config=''):
    """Calcula las cinco familias de metricas sobre volcados ya alineados por frame"""
    ev = cfg.get('evaluacion', ConfiguracionSistema.configuracion_por_defecto()['evaluacion'])
    valores = {}
    deteccion = detection_metrics(predicciones, verdad, ev['umbrales_deteccion'], ev['umbral_velocidad'])
    valores.update({'mAP': deteccion['mAP'], 'mAVE': deteccion['mAVE']})
    valores.update(tracking_metrics(predicciones, verdad, ev['umbral_rastreo']))
    valores['map_AP'] = map_metrics(predicciones, verdad, ev['umbrales_mapa'])['map_AP']
    valores.update(prediction_metrics(predicciones, verdad, ev['alfa_epa'], ev['c_epa'], ev['umbral_rastreo']))
    valores.update(planning_metrics(predicciones, verdad))
    return ReporteMetricas(valores, hash_config)
