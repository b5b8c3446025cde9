# simulador.py
"""
Mundo de conduccion 2D sintetico con semilla
Genera episodios con verdad de terreno para las cinco tareas y los tokens de sensor
"""

import json
import math
import os

import numpy as np

from config import ConfiguracionSistema, ErrorSimulacion, hash_configuracion

ESQUEMA_EPISODIO = 1

VELOCIDAD_MAXIMA = {'vehicle': 15.0, 'pedestrian': 2.0}
ALTURA = {'vehicle': 1.6, 'pedestrian': 1.75}
COMPORTAMIENTOS = ('constant-velocity', 'constant-turn', 'stop-and-go')

# Ego y limites cinematicos
EGO_ANCHO = 1.9
EGO_LARGO = 4.5
EGO_VELOCIDAD_MAXIMA = 15.0
EGO_TASA_GIRO_MAXIMA = 0.5   # rad/s
VELOCIDAD_CRUCERO = 8.0      # m/s

# Geometria de la via
ANCHO_CARRIL = 3.5
LARGO_VIA = 80.0
VERTICES_POLILINEA = 10
DISTANCIA_MAXIMA_CARRIL = 5.0

# Control de velocidad del experto
FRENADO_COMODO = 3.0         # m/s^2
HOLGURA_MINIMA = 2.0         # m
ANCHO_CORREDOR = 2.5         # m, semiancho lateral
ALCANCE_CORREDOR = 40.0      # m

CANALES_TOKEN = (
    'ocupacion', 'desfase_x', 'desfase_y', 'hits_vehicle', 'hits_pedestrian',
    'mapa_lane-divider', 'mapa_crossing', 'mapa_boundary',
)


class ObjetoVerdad:
    """
    Objeto de verdad de terreno en coordenadas del mundo
    """

    def __init__(self, id_instancia, categoria, posicion, velocidad, tamano, rumbo,
                 comportamiento, tasa_giro=0.0, periodo=0, fase=0, rapidez_crucero=0.0):
        self.id = int(id_instancia)
        self.categoria = categoria
        self.posicion = np.array(posicion, dtype=np.float64)
        self.velocidad = np.array(velocidad, dtype=np.float64)
        self.tamano = np.array(tamano, dtype=np.float64)      # (w, l)
        self.altura = ALTURA[categoria]
        self.z = 0.0
        self.rumbo = float(rumbo)
        self.comportamiento = comportamiento
        self.tasa_giro = float(tasa_giro)
        self.periodo = int(periodo)
        self.fase = int(fase)
        self.rapidez_crucero = float(rapidez_crucero)

    def copiar(self):
        return ObjetoVerdad.desde_dict(self.a_dict())

    def avanzar(self, dt):
        """Avanza un paso segun su modelo de comportamiento"""
        if self.comportamiento == 'constant-turn':
            rapidez = float(np.hypot(*self.velocidad))
            w = self.tasa_giro
            theta0 = math.atan2(self.velocidad[1], self.velocidad[0])
            theta1 = theta0 + w * dt
            radio = rapidez / w
            self.posicion = self.posicion + radio * np.array([
                math.sin(theta1) - math.sin(theta0),
                -math.cos(theta1) + math.cos(theta0),
            ])
            self.velocidad = rapidez * np.array([math.cos(theta1), math.sin(theta1)])
            self.rumbo = _envolver(theta1)
        elif self.comportamiento == 'stop-and-go':
            self.posicion = self.posicion + self.velocidad * dt
            self.fase += 1
            en_marcha = (self.fase // self.periodo) % 2 == 0
            direccion = np.array([math.cos(self.rumbo), math.sin(self.rumbo)])
            self.velocidad = direccion * (self.rapidez_crucero if en_marcha else 0.0)
        else:
            self.posicion = self.posicion + self.velocidad * dt

    def caja(self):
        """Caja de 7 parametros (x, y, z, w, h, l, rumbo)"""
        return np.array([self.posicion[0], self.posicion[1], self.z,
                         self.tamano[0], self.altura, self.tamano[1], self.rumbo])

    def a_dict(self):
        return {
            'id': self.id, 'categoria': self.categoria,
            'posicion': self.posicion.tolist(), 'velocidad': self.velocidad.tolist(),
            'tamano': self.tamano.tolist(), 'rumbo': self.rumbo,
            'comportamiento': self.comportamiento, 'tasa_giro': self.tasa_giro,
            'periodo': self.periodo, 'fase': self.fase, 'rapidez_crucero': self.rapidez_crucero,
        }

    @classmethod
    def desde_dict(cls, datos):
        return cls(datos['id'], datos['categoria'], datos['posicion'], datos['velocidad'],
                   datos['tamano'], datos['rumbo'], datos['comportamiento'], datos['tasa_giro'],
                   datos['periodo'], datos['fase'], datos['rapidez_crucero'])


class Polilinea:
    """Polilinea de mapa con categoria y Nv vertices"""

    def __init__(self, categoria, vertices):
        self.categoria = categoria
        self.vertices = np.array(vertices, dtype=np.float64)

    def a_dict(self):
        return {'categoria': self.categoria, 'vertices': self.vertices.tolist()}

    @classmethod
    def desde_dict(cls, datos):
        return cls(datos['categoria'], datos['vertices'])


class Carril:
    """Linea central de carril recta: origen, direccion unitaria y tramo [s_min, s_max]"""

    def __init__(self, origen, direccion, s_min, s_max):
        self.origen = np.array(origen, dtype=np.float64)
        self.direccion = np.array(direccion, dtype=np.float64)
        self.s_min = float(s_min)
        self.s_max = float(s_max)

    def proyectar(self, punto):
        """Retorna (s, distancia lateral con signo) de un punto respecto del carril"""
        rel = np.asarray(punto, dtype=np.float64) - self.origen
        normal = np.array([-self.direccion[1], self.direccion[0]])
        return float(rel @ self.direccion), float(rel @ normal)

    def punto(self, s):
        return self.origen + s * self.direccion

    def distancia(self, punto):
        s, lateral = self.proyectar(punto)
        s_recortado = min(max(s, self.s_min), self.s_max)
        return float(np.hypot(s - s_recortado, lateral))

    def a_dict(self):
        return {'origen': self.origen.tolist(), 'direccion': self.direccion.tolist(),
                's_min': self.s_min, 's_max': self.s_max}

    @classmethod
    def desde_dict(cls, datos):
        return cls(datos['origen'], datos['direccion'], datos['s_min'], datos['s_max'])


class MapaEscena:
    """Polilineas vectorizadas y carriles de la escena"""

    def __init__(self, polilineas, carriles, origen_via, direccion_via):
        self.polilineas = polilineas
        self.carriles = carriles
        self.origen_via = np.array(origen_via, dtype=np.float64)
        self.direccion_via = np.array(direccion_via, dtype=np.float64)

    def carril_mas_cercano(self, punto):
        if not self.carriles:
            return None, math.inf
        distancias = [c.distancia(punto) for c in self.carriles]
        i = int(np.argmin(distancias))
        return self.carriles[i], distancias[i]

    def a_dict(self):
        return {
            'polilineas': [p.a_dict() for p in self.polilineas],
            'carriles': [c.a_dict() for c in self.carriles],
            'origen_via': self.origen_via.tolist(),
            'direccion_via': self.direccion_via.tolist(),
        }

    @classmethod
    def desde_dict(cls, datos):
        return cls([Polilinea.desde_dict(p) for p in datos['polilineas']],
                   [Carril.desde_dict(c) for c in datos['carriles']],
                   datos['origen_via'], datos['direccion_via'])


class EstadoEgo:
    """Estado del vehiculo ego y su plan experto"""

    def __init__(self, posicion, velocidad, rumbo, plan_experto=None, velocidad_crucero=VELOCIDAD_CRUCERO):
        self.posicion = np.array(posicion, dtype=np.float64)
        self.velocidad = np.array(velocidad, dtype=np.float64)
        self.rumbo = float(rumbo)
        self.velocidad_crucero = float(velocidad_crucero)
        self.plan_experto = None if plan_experto is None else np.array(plan_experto, dtype=np.float64)

    def copiar(self):
        return EstadoEgo.desde_dict(self.a_dict())

    def caja(self):
        return np.array([self.posicion[0], self.posicion[1], EGO_ANCHO, EGO_LARGO, self.rumbo])

    def a_dict(self):
        return {
            'posicion': self.posicion.tolist(), 'velocidad': self.velocidad.tolist(),
            'rumbo': self.rumbo, 'velocidad_crucero': self.velocidad_crucero,
            'plan_experto': None if self.plan_experto is None else self.plan_experto.tolist(),
        }

    @classmethod
    def desde_dict(cls, datos):
        return cls(datos['posicion'], datos['velocidad'], datos['rumbo'], datos['plan_experto'],
                   datos.get('velocidad_crucero', VELOCIDAD_CRUCERO))


class EstadoMundo:
    """Un frame del mundo: objetos vivos, ego, mapa y banderas del paso"""

    def __init__(self, t, objetos, ego, mapa, radio, dt, colision=False, recortado=False):
        self.t = int(t)
        self.objetos = objetos
        self.ego = ego
        self.mapa = mapa
        self.radio = float(radio)
        self.dt = float(dt)
        self.colision = bool(colision)
        self.recortado = bool(recortado)

    def copiar(self):
        return EstadoMundo(self.t, [o.copiar() for o in self.objetos], self.ego.copiar(),
                           self.mapa, self.radio, self.dt, self.colision, self.recortado)

    def objeto(self, id_instancia):
        for o in self.objetos:
            if o.id == id_instancia:
                return o
        return None

    def a_dict(self):
        return {
            't': self.t, 'objetos': [o.a_dict() for o in self.objetos],
            'ego': self.ego.a_dict(), 'colision': self.colision, 'recortado': self.recortado,
        }

    @classmethod
    def desde_dict(cls, datos, mapa, radio, dt):
        return cls(datos['t'], [ObjetoVerdad.desde_dict(o) for o in datos['objetos']],
                   EstadoEgo.desde_dict(datos['ego']), mapa, radio, dt,
                   datos['colision'], datos['recortado'])


class ConjuntoTokens:
    """
    Tokens de sensor: G x G celdas con caracteristicas locales al frame
    """

    def __init__(self, caracteristicas, centros, rejilla, radio):
        self.caracteristicas = np.array(caracteristicas, dtype=np.float64)
        self.centros = np.array(centros, dtype=np.float64)
        self.rejilla = int(rejilla)
        self.radio = float(radio)

    @property
    def ocupacion(self):
        return self.caracteristicas[:, 0]

    def a_dict(self):
        return {'caracteristicas': self.caracteristicas.tolist(), 'rejilla': self.rejilla,
                'radio': self.radio}

    @classmethod
    def desde_dict(cls, datos):
        return cls(datos['caracteristicas'], centros_celdas(datos['rejilla'], datos['radio']),
                   datos['rejilla'], datos['radio'])


class Episodio:
    """
    Escena sintetica completa, reproducible a partir de (semilla, configuracion)
    """

    def __init__(self, semilla, config_mundo, frames, mapa, tokens, nacimientos):
        self.semilla = int(semilla)
        self.config_mundo = dict(config_mundo)
        self.frames = frames
        self.mapa = mapa
        self.tokens = tokens
        self.nacimientos = nacimientos

    @property
    def dt(self):
        return self.config_mundo['dt']

    @property
    def num_frames(self):
        return len(self.frames)

    def posiciones_instancia(self, id_instancia):
        """Diccionario frame -> posicion para una instancia"""
        posiciones = {}
        for frame in self.frames:
            o = frame.objeto(id_instancia)
            if o is not None:
                posiciones[frame.t] = o.posicion
        return posiciones

    def a_dict(self):
        return {
            'schema_version': ESQUEMA_EPISODIO,
            'semilla': self.semilla,
            'config_mundo': self.config_mundo,
            'mapa': self.mapa.a_dict(),
            'frames': [f.a_dict() for f in self.frames],
            'tokens': [t.a_dict() for t in self.tokens],
            'nacimientos': [list(n) for n in self.nacimientos],
        }

    @classmethod
    def desde_dict(cls, datos):
        if datos.get('schema_version') != ESQUEMA_EPISODIO:
            raise ErrorSimulacion(f"Esquema de episodio no soportado: {datos.get('schema_version')}")
        cfg = datos['config_mundo']
        mapa = MapaEscena.desde_dict(datos['mapa'])
        frames = [EstadoMundo.desde_dict(f, mapa, cfg['radio'], cfg['dt']) for f in datos['frames']]
        tokens = [ConjuntoTokens.desde_dict(t) for t in datos['tokens']]
        return cls(datos['semilla'], cfg, frames, mapa, tokens,
                   [tuple(n) for n in datos['nacimientos']])


# ---------------------------------------------------------------------------
# Utilidades geometricas
# ---------------------------------------------------------------------------

def _envolver(angulo):
    """Envuelve un angulo a (-pi, pi]"""
    envuelto = math.atan2(math.sin(angulo), math.cos(angulo))
    return math.pi if envuelto == -math.pi else envuelto


def esquinas_caja(centro, ancho, largo, rumbo):
    """Cuatro esquinas de una caja orientada (largo sobre el eje del rumbo)"""
    c, s = math.cos(rumbo), math.sin(rumbo)
    eje_l = np.array([c, s]) * (largo / 2.0)
    eje_w = np.array([-s, c]) * (ancho / 2.0)
    centro = np.asarray(centro, dtype=np.float64)
    return np.array([centro + eje_l + eje_w, centro + eje_l - eje_w,
                     centro - eje_l - eje_w, centro - eje_l + eje_w])


def cajas_intersectan(esquinas_a, esquinas_b):
    """Prueba de ejes separadores para dos rectangulos orientados"""
    for esquinas in (esquinas_a, esquinas_b):
        for i in range(2):
            borde = esquinas[i + 1] - esquinas[i]
            eje = np.array([-borde[1], borde[0]])
            pa = esquinas_a @ eje
            pb = esquinas_b @ eje
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


def ego_colisiona(posicion, rumbo, objetos):
    """Verdadero si la caja del ego en posicion/rumbo toca alguna caja de objeto"""
    caja_ego = esquinas_caja(posicion, EGO_ANCHO, EGO_LARGO, rumbo)
    for o in objetos:
        if cajas_intersectan(caja_ego, esquinas_caja(o.posicion, o.tamano[0], o.tamano[1], o.rumbo)):
            return True
    return False


def dentro_del_mundo(posicion, radio):
    return bool(np.all(np.abs(posicion) <= radio))


def centros_celdas(rejilla, radio):
    """Centros de celda en orden fila-mayor (iy, ix)"""
    tam = 2.0 * radio / rejilla
    coords = -radio + (np.arange(rejilla) + 0.5) * tam
    xs, ys = np.meshgrid(coords, coords)
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def indice_celda(punto, rejilla, radio):
    """Indice fila-mayor de la celda que contiene el punto, o None si esta fuera"""
    tam = 2.0 * radio / rejilla
    ix = int(math.floor((punto[0] + radio) / tam))
    iy = int(math.floor((punto[1] + radio) / tam))
    if 0 <= ix < rejilla and 0 <= iy < rejilla:
        return iy * rejilla + ix
    return None


def _muestras_polilinea(vertices, paso=1.0):
    """Muestras deterministas cada `paso` metros a lo largo de la polilinea"""
    puntos = []
    for a, b in zip(vertices[:-1], vertices[1:]):
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / paso)))
        for k in range(n):
            puntos.append(a + (b - a) * (k / n))
    puntos.append(vertices[-1])
    return puntos


# ---------------------------------------------------------------------------
# Generacion de la escena
# ---------------------------------------------------------------------------

def _validar_config_mundo(cfg):
    if cfg['frames'] < 1:
        raise ErrorSimulacion("configuracion infactible: frames debe ser >= 1")
    if cfg['dt'] <= 0 or cfg['radio'] <= 0 or cfg['rejilla'] < 1:
        raise ErrorSimulacion("configuracion infactible: dt, radio y rejilla deben ser positivos")
    if cfg['objetos_min'] < 0 or cfg['objetos_min'] > cfg['objetos_max']:
        raise ErrorSimulacion("configuracion infactible: rango de objetos invalido")
    if cfg['polilineas'] < 0:
        raise ErrorSimulacion("configuracion infactible: polilineas negativas")
    if cfg['ruido_posicion'] < 0 or cfg['tasa_ruido'] < 0 or not 0 <= cfg['prob_fallo'] <= 1:
        raise ErrorSimulacion("configuracion infactible: niveles de ruido invalidos")
    if not 0 <= cfg['prob_nacimiento'] <= 1:
        raise ErrorSimulacion("configuracion infactible: prob_nacimiento fuera de [0, 1]")
    if cfg['radio'] < LARGO_VIA / 2.0 + 5.0:
        raise ErrorSimulacion("configuracion infactible: el mundo no contiene la via")


def _construir_mapa(rng, cfg):
    """Via recta de dos carriles con rumbo y desplazamiento aleatorios"""
    phi = rng.uniform(-math.pi, math.pi)
    u = np.array([math.cos(phi), math.sin(phi)])
    n = np.array([-u[1], u[0]])
    max_desplazamiento = max(0.0, min(10.0, cfg['radio'] - LARGO_VIA / 2.0 - 5.0))
    origen = n * rng.uniform(-max_desplazamiento, max_desplazamiento)

    s = np.linspace(-LARGO_VIA / 2.0, LARGO_VIA / 2.0, VERTICES_POLILINEA)
    base = [
        Polilinea('boundary', origen + np.outer(s, u) - ANCHO_CARRIL * n),
        Polilinea('boundary', origen + np.outer(s, u) + ANCHO_CARRIL * n),
        Polilinea('lane-divider', origen + np.outer(s, u)),
    ]
    polilineas = base[:cfg['polilineas']]
    lateral = np.linspace(-ANCHO_CARRIL - 1.0, ANCHO_CARRIL + 1.0, VERTICES_POLILINEA)
    for _ in range(max(0, cfg['polilineas'] - len(base))):
        s_cruce = rng.uniform(-LARGO_VIA / 2.0 + 5.0, LARGO_VIA / 2.0 - 5.0)
        polilineas.append(Polilinea('crossing', origen + s_cruce * u + np.outer(lateral, n)))

    mitad = ANCHO_CARRIL / 2.0
    carriles = [
        Carril(origen - mitad * n, u, -LARGO_VIA / 2.0, LARGO_VIA / 2.0),
        Carril(origen + mitad * n, -u, -LARGO_VIA / 2.0, LARGO_VIA / 2.0),
    ]
    return MapaEscena(polilineas, carriles, origen, u)


class _FabricaObjetos:
    """Coloca objetos nuevos respetando las restricciones de seguridad de la escena"""

    def __init__(self, rng, mapa, radio):
        self.rng = rng
        self.mapa = mapa
        self.radio = radio
        self.siguiente_id = 0

    def _nuevo_id(self):
        nuevo = self.siguiente_id
        self.siguiente_id += 1
        return nuevo

    def _posicion(self, s, lateral):
        u = self.mapa.direccion_via
        n = np.array([-u[1], u[0]])
        return self.mapa.origen_via + s * u + lateral * n

    def crear(self, ego):
        """Crea un objeto valido o None tras agotar reintentos"""
        for _ in range(20):
            objeto = self._intentar(ego)
            if objeto is not None and dentro_del_mundo(objeto.posicion, self.radio):
                objeto.id = self._nuevo_id()
                return objeto
        return None

    def _intentar(self, ego):
        rng = self.rng
        u = self.mapa.direccion_via
        s_ego, _ = self.mapa.carriles[0].proyectar(ego.posicion)
        if rng.random() < 0.65:
            return self._vehiculo(rng, u, s_ego)
        return self._peaton(rng, u)

    def _vehiculo(self, rng, u, s_ego):
        ancho, largo = rng.uniform(1.7, 2.0), rng.uniform(4.0, 4.8)
        lugar = rng.random()
        mitad = ANCHO_CARRIL / 2.0
        if lugar < 0.30:
            # carril del ego, siempre por delante
            s_min = s_ego + 20.0
            if s_min >= LARGO_VIA / 2.0 - 2.0:
                return None
            s = rng.uniform(s_min, LARGO_VIA / 2.0 - 2.0)
            return self._en_carril(rng, s, -mitad, u, ancho, largo)
        if lugar < 0.75:
            s = rng.uniform(-LARGO_VIA / 2.0 + 2.0, LARGO_VIA / 2.0 - 2.0)
            return self._en_carril(rng, s, mitad, -u, ancho, largo)
        # circulando fuera de la via
        radio_giro = rng.uniform(2.0, 5.0)
        rapidez = rng.uniform(2.0, 5.0)
        lado = rng.choice([-1.0, 1.0])
        centro = self._posicion(rng.uniform(-30.0, 30.0), lado * (ANCHO_CARRIL + 3.5 + radio_giro))
        return self._girando('vehicle', rng, centro, radio_giro, rapidez, (ancho, largo))

    def _en_carril(self, rng, s, lateral, direccion, ancho, largo):
        rapidez = rng.uniform(3.0, 10.0)
        rumbo = math.atan2(direccion[1], direccion[0])
        posicion = self._posicion(s, lateral)
        if rng.random() < 0.7:
            return ObjetoVerdad(-1, 'vehicle', posicion, direccion * rapidez, (ancho, largo), rumbo,
                                'constant-velocity')
        periodo = int(rng.integers(2, 5))
        fase = int(rng.integers(0, 2 * periodo))
        en_marcha = (fase // periodo) % 2 == 0
        return ObjetoVerdad(-1, 'vehicle', posicion, direccion * (rapidez if en_marcha else 0.0),
                            (ancho, largo), rumbo, 'stop-and-go', periodo=periodo, fase=fase,
                            rapidez_crucero=rapidez)

    def _peaton(self, rng, u):
        lado = rng.choice([-1.0, 1.0])
        if rng.random() < 0.5:
            lateral = lado * rng.uniform(ANCHO_CARRIL + 1.5, 15.0)
            sentido = rng.choice([-1.0, 1.0])
            rapidez = rng.uniform(0.5, 1.8)
            direccion = u * sentido
            return ObjetoVerdad(-1, 'pedestrian', self._posicion(rng.uniform(-35.0, 35.0), lateral),
                                direccion * rapidez, (0.6, 0.6), math.atan2(direccion[1], direccion[0]),
                                'constant-velocity')
        radio_giro = rng.uniform(1.0, 3.0)
        centro = self._posicion(rng.uniform(-35.0, 35.0), lado * (ANCHO_CARRIL + 1.5 + radio_giro))
        return self._girando('pedestrian', rng, centro, radio_giro, rng.uniform(0.5, 1.5), (0.6, 0.6))

    def _girando(self, categoria, rng, centro, radio_giro, rapidez, tamano):
        angulo = rng.uniform(-math.pi, math.pi)
        sentido = rng.choice([-1.0, 1.0])
        posicion = centro + radio_giro * np.array([math.cos(angulo), math.sin(angulo)])
        rumbo = angulo + sentido * math.pi / 2.0
        velocidad = rapidez * np.array([math.cos(rumbo), math.sin(rumbo)])
        return ObjetoVerdad(-1, categoria, posicion, velocidad, tamano, _envolver(rumbo),
                            'constant-turn', tasa_giro=sentido * rapidez / radio_giro)


def _semilla_derivada(semilla, *claves):
    return int(np.random.SeedSequence([int(semilla), *claves]).generate_state(1)[0])


def semilla_observacion(semilla, t):
    """Semilla de ruido del frame t de un episodio"""
    return _semilla_derivada(semilla, 2, int(t))


def gen_episode(seed, config=None):
    """
    Genera un episodio completo

    Args:
        seed (int): Semilla del episodio
        config (dict): Seccion 'mundo' de la configuracion (None = defecto)

    Returns:
        Episodio: Reproducible bit a bit a partir de (seed, config)
    """
    cfg = dict(ConfiguracionSistema.configuracion_por_defecto()['mundo'])
    if config:
        cfg.update(config)
    _validar_config_mundo(cfg)

    rng = np.random.default_rng(_semilla_derivada(seed, 0))
    rng_nacimientos = np.random.default_rng(_semilla_derivada(seed, 1))
    mapa = _construir_mapa(rng, cfg)
    fabrica = _FabricaObjetos(rng, mapa, cfg['radio'])

    carril_ego = mapa.carriles[0]
    s_inicio = -30.0
    velocidad_ego = min(cfg['velocidad_ego'], EGO_VELOCIDAD_MAXIMA)
    ego = EstadoEgo(carril_ego.punto(s_inicio), carril_ego.direccion * velocidad_ego,
                    math.atan2(carril_ego.direccion[1], carril_ego.direccion[0]),
                    velocidad_crucero=velocidad_ego)

    objetos = []
    iniciales = int(rng.integers(cfg['objetos_min'], cfg['objetos_max'] + 1))
    for _ in range(iniciales):
        nuevo = fabrica.crear(ego)
        if nuevo is not None:
            objetos.append(nuevo)

    mundo = EstadoMundo(0, objetos, ego, mapa, cfg['radio'], cfg['dt'])
    _reponer(mundo, fabrica, cfg)
    mundo.ego.plan_experto = expert_plan(mundo)

    frames = [mundo]
    nacimientos = []
    for t in range(1, cfg['frames']):
        previo = frames[-1]
        siguiente = step_world(previo, previo.ego.plan_experto[0])
        if rng_nacimientos.random() < cfg['prob_nacimiento'] and len(siguiente.objetos) < cfg['objetos_max']:
            nuevo = fabrica.crear(siguiente.ego)
            if nuevo is not None:
                siguiente.objetos.append(nuevo)
                nacimientos.append((t, nuevo.id))
        _reponer(siguiente, fabrica, cfg)
        siguiente.ego.plan_experto = expert_plan(siguiente)
        frames.append(siguiente)

    ruido = {'sigma': cfg['ruido_posicion'], 'prob_fallo': cfg['prob_fallo'],
             'tasa_ruido': cfg['tasa_ruido']}
    tokens = [observe(f, ruido, semilla_observacion(seed, f.t), cfg['rejilla']) for f in frames]
    return Episodio(seed, cfg, frames, mapa, tokens, nacimientos)


def _reponer(mundo, fabrica, cfg):
    """Repone objetos hasta el minimo configurado"""
    intentos = 0
    while len(mundo.objetos) < cfg['objetos_min'] and intentos < 100:
        nuevo = fabrica.crear(mundo.ego)
        if nuevo is not None:
            mundo.objetos.append(nuevo)
        intentos += 1


def observe(world, noise, seed, rejilla=None):
    """
    Observa un frame y produce los tokens de sensor

    Args:
        world (EstadoMundo): Frame a observar
        noise (dict): sigma (m), prob_fallo, tasa_ruido (hits de ruido por frame)
        seed (int): Semilla del ruido
        rejilla (int): Celdas por lado (None = defecto)

    Returns:
        ConjuntoTokens: Caracteristicas [G*G, 8] sin canal de velocidad
    """
    sigma = noise.get('sigma', 0.0)
    if sigma < 0:
        raise ErrorSimulacion("sigma de posicion negativa")
    rejilla = rejilla or ConfiguracionSistema.configuracion_por_defecto()['mundo']['rejilla']
    radio = world.radio
    rng = np.random.default_rng(seed)
    centros = centros_celdas(rejilla, radio)
    tam = 2.0 * radio / rejilla
    caract = np.zeros((rejilla * rejilla, len(CANALES_TOKEN)))
    suma_desfases = np.zeros((rejilla * rejilla, 2))

    def registrar_hit(punto, categoria):
        celda = indice_celda(punto, rejilla, radio)
        if celda is None:
            return
        caract[celda, 0] += 1.0
        suma_desfases[celda] += (punto - centros[celda]) / tam
        caract[celda, 3 if categoria == 'vehicle' else 4] += 1.0

    for o in world.objetos:
        if rng.random() < noise.get('prob_fallo', 0.0):
            continue
        ruido = rng.normal(0.0, sigma, size=2) if sigma > 0 else np.zeros(2)
        registrar_hit(o.posicion + ruido, o.categoria)

    for _ in range(int(rng.poisson(noise.get('tasa_ruido', 0.0)))):
        punto = rng.uniform(-radio, radio, size=2)
        categoria = 'vehicle' if rng.random() < 0.5 else 'pedestrian'
        registrar_hit(punto, categoria)

    con_hits = caract[:, 0] > 0
    caract[con_hits, 1:3] = suma_desfases[con_hits] / caract[con_hits, 0:1]

    canal_mapa = {'lane-divider': 5, 'crossing': 6, 'boundary': 7}
    for polilinea in world.mapa.polilineas:
        for punto in _muestras_polilinea(polilinea.vertices):
            celda = indice_celda(punto, rejilla, radio)
            if celda is not None:
                caract[celda, canal_mapa[polilinea.categoria]] += 1.0

    return ConjuntoTokens(caract, centros, rejilla, radio)


def step_world(world, ego_action):
    """
    Avanza el mundo un paso: objetos segun su comportamiento y ego hacia el waypoint

    Args:
        world (EstadoMundo): Estado en t (no se modifica)
        ego_action (array): Siguiente waypoint del ego (m)

    Returns:
        EstadoMundo: Estado en t+1 con banderas de colision y recorte
    """
    siguiente = world.copiar()
    siguiente.t = world.t + 1
    dt = world.dt

    for o in siguiente.objetos:
        o.avanzar(dt)
    siguiente.objetos = [o for o in siguiente.objetos if dentro_del_mundo(o.posicion, world.radio)]

    ego = siguiente.ego
    desplazamiento = np.asarray(ego_action, dtype=np.float64) - ego.posicion
    distancia = float(np.hypot(*desplazamiento))
    recortado = False
    if distancia > EGO_VELOCIDAD_MAXIMA * dt:
        distancia = EGO_VELOCIDAD_MAXIMA * dt
        recortado = True
    rumbo = ego.rumbo
    if distancia > 1e-9:
        deseado = math.atan2(desplazamiento[1], desplazamiento[0])
        giro = _envolver(deseado - ego.rumbo)
        limite = EGO_TASA_GIRO_MAXIMA * dt
        if abs(giro) > limite:
            giro = math.copysign(limite, giro)
            recortado = True
        rumbo = _envolver(ego.rumbo + giro)
    if recortado:
        nueva = ego.posicion + distancia * np.array([math.cos(rumbo), math.sin(rumbo)])
    else:
        nueva = np.asarray(ego_action, dtype=np.float64).copy()
    ego.velocidad = (nueva - ego.posicion) / dt
    ego.posicion = nueva
    ego.rumbo = rumbo
    ego.plan_experto = None

    siguiente.recortado = recortado
    siguiente.colision = ego_colisiona(ego.posicion, ego.rumbo, siguiente.objetos)
    return siguiente


def expert_plan(world, t_plan=6, velocidad_deseada=None):
    """
    Plan experto de seguimiento de carril con control de velocidad

    Circula a la velocidad de crucero del ego y frena ante objetos en el corredor
    por delante suponiendo que el lider puede detenerse en cualquier instante;
    nunca cambia de carril.

    Returns:
        ndarray: [t_plan, 2] waypoints cada dt

    Raises:
        ErrorSimulacion: Si no hay carril a menos de 5 m
    """
    carril, distancia = world.mapa.carril_mas_cercano(world.ego.posicion)
    if carril is None or distancia > DISTANCIA_MAXIMA_CARRIL:
        raise ErrorSimulacion("no hay carril a menos de 5 m del ego")
    dt = world.dt
    if velocidad_deseada is None:
        velocidad_deseada = world.ego.velocidad_crucero
    velocidad_deseada = min(velocidad_deseada, EGO_VELOCIDAD_MAXIMA)

    s_ego, _ = carril.proyectar(world.ego.posicion)
    lideres = []
    for o in world.objetos:
        s_obj, lateral = carril.proyectar(o.posicion)
        if abs(lateral) < ANCHO_CORREDOR and s_obj > s_ego:
            extension = max(o.tamano) / 2.0
            lideres.append((o, extension))

    waypoints = []
    s_actual = s_ego
    for k in range(t_plan):
        hueco = math.inf
        for o, extension in lideres:
            # posicion del lider en el paso k segun velocidad constante, sin retroceder
            s_obj, _ = carril.proyectar(o.posicion + o.velocidad * dt * k)
            s_obj = max(s_obj, carril.proyectar(o.posicion)[0])
            if s_obj > s_actual:
                hueco = min(hueco, s_obj - s_actual - extension - EGO_LARGO / 2.0)
        libre = max(hueco - HOLGURA_MINIMA, 0.0)
        velocidad = min(velocidad_deseada, math.sqrt(2.0 * FRENADO_COMODO * libre), libre / dt)
        s_actual = s_actual + velocidad * dt
        waypoints.append(carril.punto(s_actual))
    return np.array(waypoints)


def ego_en_via(world):
    """True si el ego esta a menos de 5 m de un carril y dentro de su tramo"""
    carril, distancia = world.mapa.carril_mas_cercano(world.ego.posicion)
    if carril is None or distancia > DISTANCIA_MAXIMA_CARRIL:
        return False
    s, _ = carril.proyectar(world.ego.posicion)
    return carril.s_min <= s <= carril.s_max


# ---------------------------------------------------------------------------
# Serializacion
# ---------------------------------------------------------------------------

def guardar_episodio(episodio, directorio):
    """Escribe un episodio como JSON; retorna la ruta"""
    os.makedirs(directorio, exist_ok=True)
    ruta = os.path.join(directorio, f"episodio_{episodio.semilla:06d}.json")
    with open(ruta, 'w', encoding='utf-8') as archivo:
        json.dump(episodio.a_dict(), archivo)
    return ruta


def cargar_episodio(ruta):
    with open(ruta, 'r', encoding='utf-8') as archivo:
        return Episodio.desde_dict(json.load(archivo))


def escribir_manifiesto(directorio, semillas, config_mundo, archivos):
    """Manifiesto del conjunto de datos: semillas, hash de configuracion y archivos"""
    manifiesto = {
        'schema_version': ESQUEMA_EPISODIO,
        'semillas': [int(s) for s in semillas],
        'hash_configuracion': hash_configuracion(config_mundo),
        'config_mundo': config_mundo,
        'archivos': [os.path.basename(a) for a in archivos],
    }
    ruta = os.path.join(directorio, 'manifiesto.json')
    with open(ruta, 'w', encoding='utf-8') as archivo:
        json.dump(manifiesto, archivo, indent=2, sort_keys=True)
    return ruta


def cargar_manifiesto(directorio):
    """Carga todos los episodios listados en el manifiesto de un directorio"""
    with open(os.path.join(directorio, 'manifiesto.json'), 'r', encoding='utf-8') as archivo:
        manifiesto = json.load(archivo)
    return [cargar_episodio(os.path.join(directorio, a)) for a in manifiesto['archivos']]
