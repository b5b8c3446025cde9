# entrenamiento.py
"""
Asignacion de objetivos, perdidas y programador de dos etapas
Incluye el cableado secuencial y los interruptores de ablacion, de modo que
la comparacion dividido/secuencial es una diferencia de configuracion.
"""

import copy
import os
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

import autograd as ag
from config import ConfiguracionSistema, ErrorConfiguracion, ErrorEntrenamiento, queue_por_etapa
from decodificador_semantico import CATEGORIAS_CAJA, CATEGORIAS_MAPA_PRED
from modelo import GRUPOS_MOVIMIENTO, GRUPOS_SEMANTICOS, ModeloDMAD
from optimizador import Adam
from rastreador import (ConjuntoRastreo, PoliticaPropagacion, actualizar_rastreo, propagate,
                        select_positives)

PERDIDAS_ETAPA = {
    1: ('deteccion', 'mapa', 'unimodal'),
    2: ('deteccion', 'mapa', 'unimodal', 'multimodal', 'planificacion'),
}
FAMILIAS_SEMANTICAS = ('deteccion', 'mapa')
FAMILIAS_MOVIMIENTO = ('unimodal', 'multimodal', 'planificacion')
COSTO_INFACTIBLE = 1e12


class StageConfig:
    """Etapa, perdidas activas, longitud de cola, pasos, tasa de aprendizaje y semilla"""

    def __init__(self, etapa, queue_length, pasos, lr, semilla):
        if etapa not in PERDIDAS_ETAPA:
            raise ErrorConfiguracion(f"etapa desconocida: {etapa}")
        self.etapa = etapa
        self.perdidas_activas = PERDIDAS_ETAPA[etapa]
        self.queue_length = int(queue_length)
        self.pasos = int(pasos)
        self.lr = float(lr)
        self.semilla = int(semilla)

    @classmethod
    def desde_configuracion(cls, cfg, etapa):
        ent = cfg['entrenamiento']
        return cls(etapa, queue_por_etapa(cfg, etapa), ent[f'pasos_stage{etapa}'], ent['lr'],
                   ent['semilla'] + etapa)


class AblationFlags:
    """Interruptores de ablacion con nombre propio en la configuracion"""

    CAMPOS = ('architecture', 'interactions', 'velocity_mode', 'unimodal_horizon_s', 'queue_length')

    def __init__(self, architecture='divided', interactions=None, velocity_mode='derive-from-unimodal',
                 unimodal_horizon_s=4.0, queue_length=3):
        self.architecture = architecture
        self.interactions = dict(interactions or {'obj_map': True, 'obj_mt': False, 'mt_map': False})
        self.velocity_mode = velocity_mode
        self.unimodal_horizon_s = unimodal_horizon_s
        self.queue_length = queue_length

    @classmethod
    def desde_configuracion(cls, cfg):
        return cls(**{campo: copy.deepcopy(cfg['ablacion'][campo]) for campo in cls.CAMPOS})

    def aplicar(self, cfg):
        """Copia de cfg con la seccion de ablacion reemplazada"""
        nueva = copy.deepcopy(cfg)
        for campo in self.CAMPOS:
            nueva['ablacion'][campo] = copy.deepcopy(getattr(self, campo))
        return nueva


# ---------------------------------------------------------------------------
# Emparejamiento
# ---------------------------------------------------------------------------

class ResultadoEmparejamiento:
    """Pares (consulta, id de verdad), no emparejados y costo total"""

    def __init__(self, pares, consultas_libres, gts_libres, costo):
        self.pares = sorted(pares)
        self.consultas_libres = sorted(consultas_libres)
        self.gts_libres = sorted(gts_libres)
        self.costo = float(costo)

    def id_verdad_por_consulta(self, n):
        ids = np.full(n, -1, dtype=np.int64)
        for q, gt in self.pares:
            ids[q] = gt
        return ids


def matriz_costos(probabilidades, centros, gt_categorias, gt_centros, lambda_cls=2.0, lambda_centro=0.25):
    """costo[i, j] = lambda_cls (1 - p_i(cat_j)) + lambda_centro |centro_i - centro_j|_1"""
    probabilidades = np.asarray(probabilidades, dtype=np.float64)
    centros = np.asarray(centros, dtype=np.float64)
    if len(gt_categorias) == 0 or len(centros) == 0:
        return np.zeros((len(centros), len(gt_categorias)))
    gt_centros = np.asarray(gt_centros, dtype=np.float64).reshape(len(gt_categorias), -1)
    clase = 1.0 - probabilidades[:, np.asarray(gt_categorias, dtype=np.int64)]
    distancia = np.abs(centros[:, None, :gt_centros.shape[1]] - gt_centros[None, :, :]).sum(axis=-1)
    return lambda_cls * clase + lambda_centro * distancia


def hungarian_match(probabilidades, centros, gt_categorias, gt_centros, gt_ids, ids_verdad_consultas=None,
                    lambda_cls=2.0, lambda_centro=0.25, costos=None):
    """
    Asignacion uno a uno de costo minimo entre consultas y objetos de verdad

    Las consultas propagadas cuyo objeto de verdad sigue vivo se pre-asignan a
    el; el algoritmo hungaro resuelve el resto.

    Returns:
        ResultadoEmparejamiento
    """
    if costos is None:
        costos = matriz_costos(probabilidades, centros, gt_categorias, gt_centros, lambda_cls, lambda_centro)
    n, m = costos.shape
    gt_ids = [int(g) for g in gt_ids]
    columna = {g: j for j, g in enumerate(gt_ids)}

    pares = []
    costo = 0.0
    filas_usadas, columnas_usadas = set(), set()
    if ids_verdad_consultas is not None:
        for i, id_verdad in enumerate(ids_verdad_consultas):
            j = columna.get(int(id_verdad))
            if id_verdad >= 0 and j is not None and j not in columnas_usadas and np.isfinite(costos[i, j]):
                pares.append((i, gt_ids[j]))
                costo += costos[i, j]
                filas_usadas.add(i)
                columnas_usadas.add(j)

    filas = [i for i in range(n) if i not in filas_usadas]
    columnas = [j for j in range(m) if j not in columnas_usadas]
    if filas and columnas:
        sub = costos[np.ix_(filas, columnas)]
        finito = np.isfinite(sub)
        r, c = linear_sum_assignment(np.where(finito, sub, COSTO_INFACTIBLE))
        for a, b in zip(r, c):
            if finito[a, b]:
                pares.append((filas[a], gt_ids[columnas[b]]))
                costo += sub[a, b]

    emparejadas = {q for q, _ in pares}
    gts_emparejados = {g for _, g in pares}
    return ResultadoEmparejamiento(
        pares,
        [i for i in range(n) if i not in emparejadas],
        [g for g in gt_ids if g not in gts_emparejados],
        costo,
    )


def emparejar_frame(salida, frame, cfg):
    """Empareja las cajas de la ultima capa con los objetos vivos del frame"""
    cajas = salida.final.cajas
    objetos = frame.objetos
    categorias = [CATEGORIAS_CAJA.index(o.categoria) for o in objetos]
    gt_centros = np.array([[o.posicion[0], o.posicion[1], o.z] for o in objetos]).reshape(len(objetos), 3)
    ent = cfg['entrenamiento']
    return hungarian_match(cajas.probabilidades, cajas.centro.data, categorias, gt_centros,
                           [o.id for o in objetos], salida.consultas.ids_verdad,
                           ent['lambda_cls'], ent['lambda_centro'])


# ---------------------------------------------------------------------------
# Perdidas
# ---------------------------------------------------------------------------

def _entropia_cruzada(logits, objetivos):
    """Media de -log softmax(logits)[i, objetivo_i]"""
    uno = np.zeros(logits.shape)
    uno[np.arange(len(objetivos)), objetivos] = 1.0
    return ag.sum(ag.log_softmax(logits, axis=1) * uno) * (-1.0 / len(objetivos))


def _l1_medio(prediccion, objetivo, filas):
    return ag.sum(ag.abs(prediccion - objetivo)) * (1.0 / filas)


def loss_detection(semanticas, emparejamiento, objetos, con_velocidad=False):
    """
    Entropia cruzada sobre todas las consultas mas L1 en centro (desfases),
    tamano y seno/coseno de las emparejadas, promediada sobre capas

    Args:
        objetos (dict): id -> ObjetoVerdad del frame
    """
    fondo = CATEGORIAS_CAJA.index('background')
    indices = np.array([q for q, _ in emparejamiento.pares], dtype=np.int64)
    verdad = [objetos[g] for _, g in emparejamiento.pares]
    total = None
    for capa in semanticas:
        cajas = capa.cajas
        n = cajas.logits.shape[0]
        objetivos = np.full(n, fondo, dtype=np.int64)
        for q, o in zip(indices, verdad):
            objetivos[q] = CATEGORIAS_CAJA.index(o.categoria)
        perdida = _entropia_cruzada(cajas.logits, objetivos)
        if len(indices):
            m = len(indices)
            centro = np.array([[o.posicion[0], o.posicion[1], o.z] for o in verdad])
            tamano = np.array([[o.tamano[0], o.altura, o.tamano[1]] for o in verdad])
            seno_coseno = np.array([[np.sin(o.rumbo), np.cos(o.rumbo)] for o in verdad])
            perdida = perdida + _l1_medio(ag.gather_rows(cajas.centro, indices), centro, m)
            perdida = perdida + _l1_medio(ag.gather_rows(cajas.tamanos, indices), tamano, m)
            perdida = perdida + _l1_medio(ag.gather_rows(cajas.seno_coseno, indices), seno_coseno, m)
            if con_velocidad and cajas.velocidad is not None:
                velocidad = np.array([o.velocidad for o in verdad])
                perdida = perdida + _l1_medio(ag.gather_rows(cajas.velocidad, indices), velocidad, m)
        total = perdida if total is None else total + perdida
    return total * (1.0 / len(semanticas))


def _costo_polilinea(vertices, objetivo):
    """L1 medio por vertice bajo el mejor sentido de recorrido; retorna (costo, invertir)"""
    directo = np.abs(vertices - objetivo).sum(axis=-1).mean()
    invertido = np.abs(vertices - objetivo[::-1]).sum(axis=-1).mean()
    return (directo, False) if directo <= invertido else (invertido, True)


def loss_map(semanticas, mapa, lambda_cls=2.0):
    """
    Entropia cruzada mas L1 por vertice bajo el sentido optimo, con emparejamiento
    hungaro por capa entre consultas de mapa y polilineas
    """
    fondo = CATEGORIAS_MAPA_PRED.index('background')
    gt = mapa.polilineas
    total = None
    for capa in semanticas:
        pred = capa.mapa
        n = pred.logits.shape[0]
        objetivos = np.full(n, fondo, dtype=np.int64)
        pares = []
        if gt:
            costos = np.zeros((n, len(gt)))
            inversiones = np.zeros((n, len(gt)), dtype=bool)
            for i in range(n):
                for j, polilinea in enumerate(gt):
                    geometria, invertir = _costo_polilinea(pred.vertices.data[i], polilinea.vertices)
                    clase = 1.0 - pred.probabilidades[i, CATEGORIAS_MAPA_PRED.index(polilinea.categoria)]
                    costos[i, j] = lambda_cls * clase + geometria
                    inversiones[i, j] = invertir
            filas, columnas = linear_sum_assignment(costos)
            pares = [(i, j, inversiones[i, j]) for i, j in zip(filas, columnas)]
        for i, j, _ in pares:
            objetivos[i] = CATEGORIAS_MAPA_PRED.index(gt[j].categoria)
        perdida = _entropia_cruzada(pred.logits, objetivos)
        if pares:
            indices = np.array([i for i, _, _ in pares], dtype=np.int64)
            objetivo = np.stack([gt[j].vertices[::-1] if inv else gt[j].vertices for _, j, inv in pares])
            vertices = objetivo.shape[1]
            perdida = perdida + _l1_medio(ag.gather_rows(pred.vertices, indices), objetivo,
                                          len(pares) * vertices)
        total = perdida if total is None else total + perdida
    return total * (1.0 / len(semanticas))


@lru_cache(maxsize=64)
def trayectorias_verdad(episodio):
    """id -> {frame: (posicion, velocidad)} de un episodio"""
    indice = {}
    for frame in episodio.frames:
        for o in frame.objetos:
            indice.setdefault(o.id, {})[frame.t] = (o.posicion, o.velocidad)
    return indice


def _objetivo_temporal(trayectorias, ids, t, pasos):
    """Posiciones objetivo [M, P, 2] y mascara de validez para los pasos relativos dados"""
    objetivo = np.zeros((len(ids), len(pasos), 2))
    mascara = np.zeros((len(ids), len(pasos), 2))
    for fila, id_verdad in enumerate(ids):
        historia = trayectorias.get(id_verdad, {})
        for columna, k in enumerate(pasos):
            estado = historia.get(t + k)
            if estado is not None:
                objetivo[fila, columna] = estado[0]
                mascara[fila, columna] = 1.0
    return objetivo, mascara


def loss_unimodal(unimodales, emparejamiento, trayectorias, t, velocidad=None):
    """
    L1 sobre pasos validos (desde el nacimiento y dentro del episodio) por capa;
    con velocidad regresada desde Q_mt suma su L1 contra la verdad
    """
    if not emparejamiento.pares:
        return ag.Tensor(0.0)
    indices = np.array([q for q, _ in emparejamiento.pares], dtype=np.int64)
    ids = [g for _, g in emparejamiento.pares]
    primera = unimodales[0]
    pasos = list(range(-primera.t_pasado, primera.t_futuro + 1))
    objetivo, mascara = _objetivo_temporal(trayectorias, ids, t, pasos)
    validos = max(mascara.sum() / 2.0, 1.0)

    total = None
    for trayectoria in unimodales:
        filas = ag.indexar(trayectoria.puntos, indices)
        perdida = ag.sum(ag.abs(filas - objetivo) * mascara) * (1.0 / validos)
        total = perdida if total is None else total + perdida
    total = total * (1.0 / len(unimodales))

    if velocidad is not None:
        real = np.array([trayectorias[g][t][1] for g in ids])
        total = total + _l1_medio(ag.gather_rows(velocidad, indices), real, len(ids))
    return total


def loss_multimodal(multimodal, emparejamiento, trayectorias, t):
    """
    Ganador-se-lo-lleva-todo: L1 del mejor modo mas entropia cruzada hacia ese modo
    """
    if not emparejamiento.pares:
        return ag.Tensor(0.0)
    n_pasos = multimodal.trayectorias.shape[2]
    ids = [g for _, g in emparejamiento.pares]
    objetivo, mascara = _objetivo_temporal(trayectorias, ids, t, list(range(1, n_pasos + 1)))
    validos = mascara.sum(axis=(1, 2)) / 2.0
    filas = np.flatnonzero(validos > 0)
    if not len(filas):
        return ag.Tensor(0.0)
    indices = np.array([emparejamiento.pares[f][0] for f in filas], dtype=np.int64)
    objetivo, mascara, validos = objetivo[filas], mascara[filas], validos[filas]

    pred = ag.indexar(multimodal.trayectorias, indices)
    error = ag.abs(pred - objetivo[:, None]) * mascara[:, None]
    por_modo = ag.sum(ag.sum(error, axis=3), axis=2) * (1.0 / validos[:, None])
    mejor = np.argmin(por_modo.data, axis=1)
    uno = np.zeros(por_modo.shape)
    uno[np.arange(len(mejor)), mejor] = 1.0
    m = len(indices)
    regresion = ag.sum(por_modo * uno) * (1.0 / m)
    clasificacion = ag.sum(ag.indexar(multimodal.log_confianzas, indices) * uno) * (-1.0 / m)
    return regresion + clasificacion


def loss_planning(plan, experto, posiciones_futuras, radio_seguridad=0.5):
    """
    L1 al plan experto mas penalizacion bisagra relu(radio - distancia) al objeto
    mas cercano en el paso correspondiente

    Args:
        posiciones_futuras (list): Por paso k, arreglo [m_k, 2] de centros de objetos
    """
    pasos = plan.shape[0]
    perdida = _l1_medio(plan, np.asarray(experto), pasos)
    for k, posiciones in enumerate(posiciones_futuras[:pasos]):
        if posiciones is None or len(posiciones) == 0:
            continue
        diferencia = plan[k:k + 1] - np.asarray(posiciones)
        distancia = ag.sqrt(ag.sum(ag.square(diferencia), axis=1) + 1e-12)
        perdida = perdida + ag.sum(ag.relu(radio_seguridad - distancia)) * (1.0 / pasos)
    return perdida


def posiciones_futuras(episodio, t, pasos):
    """Centros de los objetos vivos en t+1 .. t+pasos (None fuera del episodio)"""
    resultado = []
    for k in range(1, pasos + 1):
        if t + k < episodio.num_frames:
            resultado.append(np.array([o.posicion for o in episodio.frames[t + k].objetos]).reshape(-1, 2))
        else:
            resultado.append(None)
    return resultado


def perdidas_frame(modelo, salida, emparejamiento, episodio, t, familias, cfg):
    """Perdidas del frame t restringidas a las familias pedidas"""
    frame = episodio.frames[t]
    objetos = {o.id: o for o in frame.objetos}
    trayectorias = trayectorias_verdad(episodio)
    modo = modelo.cableado_velocidad.modo
    perdidas = {}
    if 'deteccion' in familias:
        perdidas['deteccion'] = loss_detection(salida.semanticas, emparejamiento, objetos,
                                               con_velocidad=modo == 'regress-from-obj')
    if 'mapa' in familias:
        perdidas['mapa'] = loss_map(salida.semanticas, episodio.mapa, cfg['entrenamiento']['lambda_cls'])
    if 'unimodal' in familias:
        velocidad = salida.velocidad if modo == 'regress-from-mt' else None
        perdidas['unimodal'] = loss_unimodal(salida.unimodales, emparejamiento, trayectorias, t, velocidad)
    if 'multimodal' in familias and salida.multimodal is not None:
        perdidas['multimodal'] = loss_multimodal(salida.multimodal, emparejamiento, trayectorias, t)
    if 'planificacion' in familias and salida.plan is not None:
        perdidas['planificacion'] = loss_planning(
            salida.plan, frame.ego.plan_experto, posiciones_futuras(episodio, t, salida.plan.shape[0]),
            cfg['entrenamiento']['radio_seguridad'])
    return perdidas


# ---------------------------------------------------------------------------
# Muestras y bucle de entrenamiento
# ---------------------------------------------------------------------------

def paso_muestra(modelo, episodio, inicio, q, familias, cfg):
    """
    Desenrolla q frames consecutivos con propagacion de consultas

    Returns:
        tuple: (perdida total Tensor, dict de terminos medios, registros de orden por frame)
    """
    if inicio < 0 or inicio + q > episodio.num_frames:
        raise ErrorEntrenamiento(
            f"muestra [{inicio}, {inicio + q}) fuera de un episodio de {episodio.num_frames} frames")
    pesos = cfg['entrenamiento']['pesos']
    conjunto = ConjuntoRastreo()
    politica = PoliticaPropagacion.desde_configuracion(cfg, 'training')
    frescas = modelo.consultas_frescas()
    normas = modelo.normas_propagacion()
    etapa2 = any(f in familias for f in ('multimodal', 'planificacion'))

    acumulado = {}
    ordenes = []
    for t in range(inicio, inicio + q):
        frame = episodio.frames[t]
        consultas = propagate(conjunto, *frescas, *normas)
        salida = modelo.procesar_frame(episodio.tokens[t], consultas, frame.ego.posicion,
                                       multimodal=etapa2, plan=etapa2)
        ordenes.append(list(salida.registro_orden))
        emparejamiento = emparejar_frame(salida, frame, cfg)
        for nombre, valor in perdidas_frame(modelo, salida, emparejamiento, episodio, t, familias, cfg).items():
            acumulado.setdefault(nombre, []).append(valor)

        confianzas = salida.final.cajas.confianza
        positivos = select_positives(confianzas, 'training', emparejamiento)
        n = len(confianzas)
        actualizar_rastreo(conjunto, consultas, positivos, salida.final.q_obj,
                           salida.q_mt if modelo.movimiento is not None else None,
                           salida.referencias_siguientes(), confianzas, politica,
                           emparejamiento.id_verdad_por_consulta(n))

    total = None
    terminos = {}
    for nombre, valores in acumulado.items():
        media = valores[0]
        for v in valores[1:]:
            media = media + v
        media = media * (1.0 / len(valores))
        terminos[nombre] = float(media.data)
        ponderada = media * pesos[nombre]
        total = ponderada if total is None else total + ponderada
    if total is None:
        total = ag.Tensor(0.0)
    return total, terminos, ordenes


def _norma(grad):
    return float(np.sqrt(np.sum(grad * grad)))


def auditar_gradientes(modelo, episodio, inicio, q, cfg):
    """
    Normas de gradiente por grupo de parametros para cada familia de perdida

    Returns:
        dict: familia -> {grupo: norma L2}
    """
    grupos = modelo.grupos_parametros()
    parametros = modelo.parametros()
    normas = {}
    for familia in PERDIDAS_ETAPA[2]:
        ag.nueva_cinta()
        total, _, _ = paso_muestra(modelo, episodio, inicio, q, (familia,), cfg)
        ag.backward(total, parametros)
        normas[familia] = {
            grupo: float(np.sqrt(sum(_norma(t.grad) ** 2 for _, t in miembros)))
            for grupo, miembros in grupos.items()
        }
    ag.nueva_cinta()
    return normas


def verificar_division(normas, arquitectura):
    """
    Comprueba la division de gradientes de una auditoria

    Returns:
        dict: 'semantico<-movimiento' y 'movimiento<-semantico' como normas totales
    """
    cruzado_sm = sum(normas[f].get(g, 0.0) for f in FAMILIAS_MOVIMIENTO for g in GRUPOS_SEMANTICOS)
    cruzado_ms = sum(normas[f].get(g, 0.0) for f in FAMILIAS_SEMANTICAS for g in GRUPOS_MOVIMIENTO)
    return {'arquitectura': arquitectura, 'semantico<-movimiento': cruzado_sm, 'movimiento<-semantico': cruzado_ms}


def construir_modelo(cfg):
    return ModeloDMAD(cfg)


def sequential_wiring(cfg):
    """
    Modelo en cableado secuencial: las cabezas de movimiento leen Q_obj y no hay
    consultas ni decodificador de movimiento

    Raises:
        ErrorConfiguracion: Si hay banderas de interaccion con consultas de movimiento
    """
    banderas = cfg['ablacion']['interactions']
    if banderas.get('obj_mt') or banderas.get('mt_map'):
        raise ErrorConfiguracion("el cableado secuencial no admite banderas con consultas de movimiento")
    secuencial = copy.deepcopy(cfg)
    secuencial['ablacion']['architecture'] = 'sequential'
    return ModeloDMAD(secuencial)


def entrenar_etapa(modelo, episodios, etapa_cfg, cfg, historial=None, verbose=False):
    """
    Entrena una etapa: una muestra de q frames por paso, un backward por muestra,
    gradientes truncados entre muestras

    Returns:
        list: Registros por paso
    """
    if not episodios:
        raise ErrorEntrenamiento("no hay episodios de entrenamiento")
    q = etapa_cfg.queue_length
    if any(ep.num_frames < q for ep in episodios):
        raise ErrorEntrenamiento(f"queue_length {q} excede la longitud de algun episodio")
    ent = cfg['entrenamiento']
    parametros = modelo.parametros_etapa(etapa_cfg.etapa)
    optimizador = Adam(parametros, etapa_cfg.lr, ent['beta1'], ent['beta2'], ent['eps'])
    rng = np.random.default_rng(etapa_cfg.semilla)
    auditar_cada = ent['auditar_cada']

    registros = []
    for paso in range(etapa_cfg.pasos):
        episodio = episodios[int(rng.integers(len(episodios)))]
        inicio = int(rng.integers(0, episodio.num_frames - q + 1))
        ag.nueva_cinta()
        total, terminos, ordenes = paso_muestra(modelo, episodio, inicio, q, etapa_cfg.perdidas_activas, cfg)
        ag.backward(total, parametros)
        optimizador.step()

        registro = {'etapa': etapa_cfg.etapa, 'paso': paso, 'perdida': float(total.data), **terminos}
        if auditar_cada and paso % auditar_cada == 0:
            normas = auditar_gradientes(modelo, episodio, inicio, q, cfg)
            registro['normas_gradiente'] = normas
            registro['division'] = verificar_division(normas, modelo.arquitectura)
            registro['orden'] = ordenes[0]
        registros.append(registro)
        if historial is not None:
            historial.registrar(registro)
        if verbose and (paso % 10 == 0 or paso == etapa_cfg.pasos - 1):
            print(f"  etapa {etapa_cfg.etapa} paso {paso:4d}  perdida {registro['perdida']:.4f}")
    ag.nueva_cinta()
    return registros


def train_two_stage(cfg, episodios, directorio, historial=None, etapas=(1, 2), checkpoint_etapa1=None,
                    verbose=False):
    """
    Protocolo de dos etapas: la etapa 2 parte del checkpoint de la etapa 1

    Returns:
        dict: etapa -> ruta base del checkpoint
    """
    modelo = construir_modelo(cfg)
    rutas = {}
    if 1 in etapas:
        if verbose:
            print(ConfiguracionSistema.MENSAJES['entrenando'] + " (etapa 1)")
        entrenar_etapa(modelo, episodios, StageConfig.desde_configuracion(cfg, 1), cfg, historial, verbose)
        rutas[1] = os.path.join(directorio, 'etapa1')
        modelo.guardar(rutas[1], {'etapa': 1, 'arquitectura': modelo.arquitectura})
        checkpoint_etapa1 = rutas[1]
    if 2 in etapas:
        if checkpoint_etapa1 is None or not os.path.exists(f"{checkpoint_etapa1}.json"):
            raise ErrorEntrenamiento("la etapa 2 requiere el checkpoint de la etapa 1")
        modelo.cargar(checkpoint_etapa1)
        if verbose:
            print(ConfiguracionSistema.MENSAJES['entrenando'] + " (etapa 2)")
        entrenar_etapa(modelo, episodios, StageConfig.desde_configuracion(cfg, 2), cfg, historial, verbose)
        rutas[2] = os.path.join(directorio, 'etapa2')
        modelo.guardar(rutas[2], {'etapa': 2, 'arquitectura': modelo.arquitectura})
    return rutas
