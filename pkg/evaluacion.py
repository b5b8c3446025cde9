# evaluacion.py
"""
Evaluacion de modelos entrenados

Ejecuta episodios en modo inferencia (rastreo por umbral de confianza),
produce volcados de tracks, los compara con la verdad del simulador y corre
el lazo cerrado cinematico.
"""

import numpy as np

import autograd as ag
from config import ErrorMetrica
from decodificador_movimiento import velocidad_por_diferencia
from decodificador_semantico import CATEGORIAS_CAJA, CATEGORIAS_MAPA_PRED
from metricas import construir_reporte
from modelo import ModeloDMAD
from rastreador import ConjuntoRastreo, PoliticaPropagacion, actualizar_rastreo, propagate, select_positives
from simulador import ego_en_via, expert_plan, gen_episode, observe, semilla_observacion, step_world


def cargar_modelo(cfg, ruta_checkpoint):
    """Modelo construido desde cfg con los pesos del checkpoint"""
    modelo = ModeloDMAD(cfg)
    modelo.cargar(ruta_checkpoint)
    return modelo


# ---------------------------------------------------------------------------
# Verdad
# ---------------------------------------------------------------------------

def verdad_desde_episodio(episodio, indice=0, pasos_futuros=12):
    """
    Verdad por frame en el formato de los volcados

    Returns:
        list: Un diccionario por frame con objetos (caja, velocidad, futuro),
            mapa, plan experto y estado del ego
    """
    frames = []
    for frame in episodio.frames:
        objetos = []
        for o in frame.objetos:
            futuro = []
            for k in range(1, pasos_futuros + 1):
                if frame.t + k >= episodio.num_frames:
                    break
                siguiente = episodio.frames[frame.t + k].objeto(o.id)
                if siguiente is None:
                    break
                futuro.append(siguiente.posicion.tolist())
            objetos.append({
                'id': o.id, 'categoria': o.categoria, 'caja': o.caja().tolist(),
                'velocidad': o.velocidad.tolist(), 'futuro': futuro,
            })
        frames.append({
            'episodio': indice,
            'frame': frame.t,
            'objetos': objetos,
            'mapa': [{'categoria': p.categoria, 'vertices': p.vertices.tolist()} for p in episodio.mapa.polilineas],
            'plan_experto': None if frame.ego.plan_experto is None else frame.ego.plan_experto.tolist(),
            'ego': {'posicion': frame.ego.posicion.tolist(), 'rumbo': frame.ego.rumbo},
        })
    return frames


# ---------------------------------------------------------------------------
# Inferencia
# ---------------------------------------------------------------------------

def inferir_frame(modelo, tokens, conjunto, politica, posicion_ego):
    """
    Un frame en modo inferencia con actualizacion del conjunto de tracks

    Returns:
        tuple: (SalidaFrame, ids por consulta, positivos, velocidades por consulta)
    """
    ag.nueva_cinta()
    consultas = propagate(conjunto, *modelo.consultas_frescas(), *modelo.normas_propagacion())
    salida = modelo.procesar_frame(tokens, consultas, posicion_ego)
    cajas = salida.final.cajas
    confianzas = cajas.confianza
    centros = cajas.centro.data
    n = len(confianzas)

    velocidades = [None] * n
    if modelo.cableado_velocidad.requiere_historial:
        por_id = {e.id: e for e in conjunto.entradas}
        for i in range(n):
            entrada = por_id.get(int(consultas.ids[i]))
            if entrada is None:
                continue
            try:
                velocidades[i] = velocidad_por_diferencia(centros[i], entrada.centro_previo, modelo.dt)
            except ErrorMetrica:
                velocidades[i] = None
    elif salida.velocidad is not None:
        velocidades = list(salida.velocidad.data)

    positivos = select_positives(confianzas, 'inference', tau=politica.tau)
    q_mt = salida.q_mt if modelo.movimiento is not None else None
    ids = actualizar_rastreo(conjunto, consultas, positivos, salida.final.q_obj, q_mt,
                             salida.referencias_siguientes(), confianzas, politica, centros=centros)
    ag.nueva_cinta()
    return salida, ids, positivos, velocidades


def volcado_frame(salida, ids, positivos, velocidades, t, indice=0):
    """Registro de un frame: detecciones positivas con id, mapa y plan"""
    cajas = salida.final.cajas
    detecciones = []
    futuro_desde = salida.unimodal.t_pasado + 1
    for i in sorted(int(p) for p in positivos):
        if ids[i] < 0:
            continue
        # (x, y, z, w, h, l, rumbo)
        caja = np.concatenate([cajas.centro.data[i], cajas.tamanos.data[i], [cajas.rumbo[i]]])
        unimodal = salida.unimodal.puntos.data[i]
        registro = {
            'id': int(ids[i]),
            'categoria': CATEGORIAS_CAJA[int(cajas.categoria[i])],
            'caja': caja.tolist(),
            'confianza': float(cajas.confianza[i]),
            'velocidad': None if velocidades[i] is None else np.asarray(velocidades[i]).tolist(),
            'unimodal': unimodal.tolist(),
            'futuro_unimodal': unimodal[futuro_desde:].tolist(),
            'multimodal': None,
            'confianzas_modos': None,
        }
        if salida.multimodal is not None:
            registro['multimodal'] = salida.multimodal.trayectorias.data[i].tolist()
            registro['confianzas_modos'] = salida.multimodal.confianzas[i].tolist()
        detecciones.append(registro)

    mapa = salida.final.mapa
    polilineas = []
    for j in range(mapa.logits.shape[0]):
        polilineas.append({
            'categoria': CATEGORIAS_MAPA_PRED[int(mapa.categoria[j])],
            'confianza': float(mapa.confianza[j]),
            'vertices': mapa.vertices.data[j].tolist(),
        })
    return {
        'episodio': indice,
        'frame': int(t),
        'detecciones': detecciones,
        'mapa': polilineas,
        'plan': None if salida.plan is None else salida.plan.data.tolist(),
    }


def ejecutar_episodio(modelo, episodio, cfg, indice=0):
    """
    Recorre un episodio en modo inferencia

    Returns:
        list: Volcado por frame
    """
    conjunto = ConjuntoRastreo()
    politica = PoliticaPropagacion.desde_configuracion(cfg, 'inference')
    volcados = []
    for t, frame in enumerate(episodio.frames):
        salida, ids, positivos, velocidades = inferir_frame(modelo, episodio.tokens[t], conjunto, politica,
                                                             frame.ego.posicion)
        volcados.append(volcado_frame(salida, ids, positivos, velocidades, t, indice))
    return volcados


def evaluar_modelo(modelo, episodios, cfg, hash_config='', verbose=False):
    """
    Volcados y reporte de metricas de un modelo sobre episodios de evaluacion

    Args:
        modelo (ModeloDMAD | str): Modelo o ruta base de checkpoint

    Returns:
        tuple: (volcados por episodio, ReporteMetricas)
    """
    if isinstance(modelo, str):
        modelo = cargar_modelo(cfg, modelo)
    t_futuro = cfg['modelo']['t_fut_multi']
    volcados, predicciones, verdad = [], [], []
    for indice, episodio in enumerate(episodios):
        volcado = ejecutar_episodio(modelo, episodio, cfg, indice)
        volcados.append(volcado)
        predicciones.extend(volcado)
        verdad.extend(verdad_desde_episodio(episodio, indice, t_futuro))
        if verbose:
            print(f"  episodio {indice + 1}/{len(episodios)} evaluado")
    return volcados, construir_reporte(predicciones, verdad, cfg, hash_config)


# ---------------------------------------------------------------------------
# Lazo cerrado
# ---------------------------------------------------------------------------

class ResultadoLazoCerrado:
    """Trayectorias del ego, tasa de colision (%), avance a lo largo del carril y escenas terminadas"""

    def __init__(self, trayectorias, colisiones, pasos, avances, terminadas=0):
        self.trayectorias = trayectorias
        self.pasos = pasos
        self.colisiones = colisiones
        self.avances = avances
        self.terminadas = terminadas

    @property
    def tasa_colision(self):
        return 100.0 * self.colisiones / self.pasos if self.pasos else None

    @property
    def avance_medio(self):
        return float(np.mean(self.avances)) if self.avances else None

    def a_dict(self):
        return {'pasos': self.pasos, 'colisiones': self.colisiones,
                'tasa_colision': self.tasa_colision, 'avance_medio': self.avance_medio,
                'terminadas': self.terminadas}


def closed_loop_rollout(modelo, semillas, horizonte, cfg):
    """
    Lazo cerrado: observar, decodificar, planificar y ejecutar el primer waypoint

    Args:
        modelo (ModeloDMAD | None): None usa el plan experto como politica
        semillas (list): Semillas de escena (sin nacimientos)
        horizonte (int): Pasos por escena; 0 produce metricas vacias. Una escena termina
            antes del horizonte cuando el ego sale del tramo de via

    Returns:
        ResultadoLazoCerrado
    """
    cfg_mundo = dict(cfg['mundo'])
    cfg_mundo.update({'frames': 1, 'prob_nacimiento': 0.0})
    ruido = {'sigma': cfg_mundo['ruido_posicion'], 'prob_fallo': cfg_mundo['prob_fallo'],
             'tasa_ruido': cfg_mundo['tasa_ruido']}
    t_plan = cfg['modelo']['t_plan']
    politica = PoliticaPropagacion.desde_configuracion(cfg, 'inference')

    trayectorias, avances = [], []
    colisiones = pasos = terminadas = 0
    for semilla in semillas:
        if horizonte <= 0:
            break
        mundo = gen_episode(semilla, cfg_mundo).frames[0]
        carril = mundo.mapa.carriles[0]
        inicio, _ = carril.proyectar(mundo.ego.posicion)
        conjunto = ConjuntoRastreo()
        camino = [mundo.ego.posicion.tolist()]
        for paso in range(horizonte):
            if not ego_en_via(mundo):
                terminadas += 1
                break
            if modelo is None:
                accion = expert_plan(mundo, t_plan)[0]
            else:
                tokens = observe(mundo, ruido, semilla_observacion(semilla, paso), cfg_mundo['rejilla'])
                salida, _, _, _ = inferir_frame(modelo, tokens, conjunto, politica, mundo.ego.posicion)
                accion = salida.plan.data[0]
            mundo = step_world(mundo, accion)
            camino.append(mundo.ego.posicion.tolist())
            pasos += 1
            colisiones += int(mundo.colision)
        trayectorias.append(camino)
        avances.append(carril.proyectar(mundo.ego.posicion)[0] - inicio)
    return ResultadoLazoCerrado(trayectorias, colisiones, pasos, avances, terminadas)
