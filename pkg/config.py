# config.py
"""
Configuracion del sistema DMAD de escritorio
Parametros por defecto, carga de archivos JSON y errores del sistema
"""

import copy
import hashlib
import json
import os
from datetime import datetime

from dotenv import load_dotenv

# Cargar variables de entorno (.env opcional)
load_dotenv()


class ErrorSistema(Exception):
    """Error base de todo el sistema"""


class ErrorConfiguracion(ErrorSistema):
    """Configuracion invalida o archivo con esquema incorrecto"""


class ErrorForma(ErrorSistema, ValueError):
    """Formas de tensores incompatibles"""


class ErrorGrafo(ErrorSistema):
    """Uso incorrecto de la cinta de operaciones"""


class ErrorSimulacion(ErrorSistema):
    """Configuracion de mundo infactible o estado del mundo invalido"""


class ErrorEntrenamiento(ErrorSistema):
    """Protocolo de entrenamiento violado"""


class ErrorMetrica(ErrorSistema):
    """Entradas invalidas para una metrica"""


class ConfiguracionSistema:
    """
    Clase para manejar toda la configuracion del sistema
    """

    # Informacion del sistema
    NOMBRE_SISTEMA = "DMAD de escritorio - decodificacion semantica y de movimiento"
    VERSION = "1.0"
    ESQUEMA = 1

    # Entorno
    VARIABLE_DIRECTORIO = "DMAD_RUNS_DIR"
    DIRECTORIO_POR_DEFECTO = "runs"
    ARCHIVO_HISTORIAL = "historial_ejecuciones.csv"

    # Arquitecturas, modos y rejillas de ablacion validos
    ARQUITECTURAS = ("divided", "sequential")
    MODOS_VELOCIDAD = (
        "regress-from-obj",
        "bbox-difference",
        "regress-from-mt",
        "derive-from-unimodal",
    )
    HORIZONTES_UNIMODALES = (2.0, 4.0, 6.0)
    REJILLAS = ("queue", "horizon", "interactions", "velocity")

    # Categorias del mundo sintetico
    CATEGORIAS_OBJETO = ("vehicle", "pedestrian")
    CATEGORIAS_MAPA = ("lane-divider", "crossing", "boundary")

    # Mensajes del sistema
    MENSAJES = {
        'inicio': 'Iniciando DMAD de escritorio...',
        'generando': 'Generando episodios...',
        'entrenando': 'Entrenando modelo...',
        'evaluando': 'Evaluando modelo...',
        'ablacion': 'Ejecutando rejilla de ablacion...',
        'rollout': 'Ejecutando rollout en lazo cerrado...',
        'atribucion': 'Calculando atribucion por permutacion...',
        'reporte': 'Generando reporte...',
        'error_config': 'Error de configuracion',
        'error_ejecucion': 'Error durante la ejecucion',
        'despedida': 'Ejecucion terminada',
    }

    @classmethod
    def configuracion_por_defecto(cls):
        """
        Retorna la configuracion completa por defecto

        Returns:
            dict: Configuracion anidada (copia nueva en cada llamada)
        """
        return {
            'schema_version': cls.ESQUEMA,
            'modelo': {
                'd': 64,
                'd_mt': 64,
                'cabezas': 4,
                'factor_ffn': 2,
                'capas': 6,
                'n_obj': 32,
                'n_map': 16,
                'k_modos': 6,
                't_pasado': 4,
                't_fut_multi': 12,
                't_plan': 6,
                'vertices_mapa': 10,
                'dropout': 0.0,
                'tau_pos_inicial': 100.0,
                'semilla': 0,
            },
            'mundo': {
                'radio': 50.0,
                'frames': 12,
                'dt': 0.5,
                'objetos_min': 2,
                'objetos_max': 10,
                'polilineas': 6,
                'prob_nacimiento': 0.1,
                'rejilla': 16,
                'ruido_posicion': 0.1,
                'prob_fallo': 0.05,
                'tasa_ruido': 1.0,
                'velocidad_ego': 8.0,
            },
            'rastreo': {
                'tau': 0.35,
                'max_nuevos': 32,
                'fallos_max': 2,
            },
            'entrenamiento': {
                'queue_length_stage1': None,
                'queue_length_stage2': None,
                'pasos_stage1': 200,
                'pasos_stage2': 200,
                'lr': 1e-3,
                'beta1': 0.9,
                'beta2': 0.999,
                'eps': 1e-8,
                'semilla': 0,
                'lambda_cls': 2.0,
                'lambda_centro': 0.25,
                'radio_seguridad': 0.5,
                'auditar_cada': 0,
                'pesos': {
                    'deteccion': 1.0,
                    'mapa': 1.0,
                    'unimodal': 0.5,
                    'multimodal': 0.5,
                    'planificacion': 1.0,
                },
            },
            'ablacion': {
                'architecture': 'divided',
                'interactions': {'obj_map': True, 'obj_mt': False, 'mt_map': False},
                'velocity_mode': 'derive-from-unimodal',
                'unimodal_horizon_s': 4.0,
                'queue_length': 3,
            },
            'datos': {
                'semillas_entrenamiento': [0, 256],
                'semillas_evaluacion': [1000, 1064],
            },
            'evaluacion': {
                'umbrales_deteccion': [0.5, 1.0, 2.0, 4.0],
                'umbrales_mapa': [0.5, 1.0, 1.5],
                'umbral_velocidad': 2.0,
                'umbral_rastreo': 2.0,
                'alfa_epa': 0.5,
                'c_epa': 2.0,
                'permutaciones': 5,
            },
        }

    @classmethod
    def directorio_ejecuciones(cls):
        """Retorna la raiz de directorios de ejecucion (variable de entorno o defecto)"""
        return os.getenv(cls.VARIABLE_DIRECTORIO) or cls.DIRECTORIO_POR_DEFECTO

    @classmethod
    def obtener_fecha_actual(cls):
        """Retorna la fecha actual formateada"""
        return datetime.now().strftime('%Y-%m-%d %H:%M:%S')

    @classmethod
    def obtener_info_sistema(cls):
        """
        Retorna informacion completa del sistema

        Returns:
            dict: Informacion del sistema
        """
        return {
            'nombre': cls.NOMBRE_SISTEMA,
            'version': cls.VERSION,
            'esquema': cls.ESQUEMA,
            'fecha_actual': cls.obtener_fecha_actual(),
            'directorio_ejecuciones': cls.directorio_ejecuciones(),
        }


def _fusionar(base, cambios, ruta=""):
    """Fusion recursiva; claves desconocidas son error"""
    for clave, valor in cambios.items():
        if clave not in base:
            raise ErrorConfiguracion(f"Clave desconocida: {ruta}{clave}")
        if isinstance(base[clave], dict) and isinstance(valor, dict):
            _fusionar(base[clave], valor, ruta=f"{ruta}{clave}.")
        else:
            base[clave] = valor
    return base


def construir_configuracion(cambios=None):
    """
    Construye una configuracion validada a partir de los valores por defecto

    Args:
        cambios (dict): Valores a sobreescribir (anidados)

    Returns:
        dict: Configuracion completa
    """
    cfg = ConfiguracionSistema.configuracion_por_defecto()
    if cambios:
        cambios = copy.deepcopy(cambios)
        version = cambios.pop('schema_version', ConfiguracionSistema.ESQUEMA)
        if version != ConfiguracionSistema.ESQUEMA:
            raise ErrorConfiguracion(
                f"Version de esquema {version} no soportada (se espera {ConfiguracionSistema.ESQUEMA})"
            )
        _fusionar(cfg, cambios)
    ValidadorConfiguracion.validar(cfg)
    return cfg


def aplicar_cambios(cfg, cambios):
    """Copia validada de cfg con los cambios anidados aplicados"""
    nueva = copy.deepcopy(cfg)
    _fusionar(nueva, copy.deepcopy(cambios))
    ValidadorConfiguracion.validar(nueva)
    return nueva


def cargar_configuracion(ruta=None):
    """
    Carga un archivo JSON de configuracion sobre los valores por defecto

    Args:
        ruta (str): Ruta del archivo, None para usar solo los valores por defecto

    Returns:
        dict: Configuracion completa y validada
    """
    if ruta is None:
        return construir_configuracion()
    try:
        with open(ruta, 'r', encoding='utf-8') as archivo:
            cambios = json.load(archivo)
    except FileNotFoundError:
        raise ErrorConfiguracion(f"Archivo de configuracion no encontrado: {ruta}")
    except json.JSONDecodeError as error:
        raise ErrorConfiguracion(f"JSON invalido en {ruta}: {error}")
    return construir_configuracion(cambios)


def hash_configuracion(cfg):
    """Hash SHA-256 del JSON canonico de la configuracion"""
    canonico = json.dumps(cfg, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonico.encode('utf-8')).hexdigest()


def queue_por_etapa(cfg, etapa):
    """Longitud de cola efectiva para la etapa 1 o 2"""
    especifica = cfg['entrenamiento'][f'queue_length_stage{etapa}']
    return especifica if especifica is not None else cfg['ablacion']['queue_length']


def pasos_unimodales(cfg):
    """Numero de pasos futuros de la trayectoria unimodal segun el horizonte en segundos"""
    return int(round(cfg['ablacion']['unimodal_horizon_s'] / cfg['mundo']['dt']))


class ValidadorConfiguracion:
    """
    Clase para validar configuraciones y el estado del sistema
    """

    @staticmethod
    def validar(cfg):
        """
        Valida la factibilidad de una configuracion completa

        Raises:
            ErrorConfiguracion: Con la lista de problemas encontrados
        """
        problemas = []
        m = cfg['modelo']
        mundo = cfg['mundo']
        abl = cfg['ablacion']

        if m['d'] % m['cabezas'] != 0:
            problemas.append("d debe ser divisible por cabezas")
        if m['d_mt'] % m['cabezas'] != 0:
            problemas.append("d_mt debe ser divisible por cabezas")
        if m['capas'] < 1:
            problemas.append("se requiere al menos una capa")
        if m['k_modos'] < 1:
            problemas.append("k_modos debe ser >= 1")
        if m['n_obj'] < 1 or m['n_map'] < 1:
            problemas.append("n_obj y n_map deben ser >= 1")
        if not 0.0 <= m['dropout'] < 1.0:
            problemas.append("dropout fuera de [0, 1)")
        if mundo['frames'] < 1:
            problemas.append("el episodio necesita al menos un frame")
        if mundo['dt'] <= 0:
            problemas.append("dt debe ser positivo")
        if mundo['objetos_min'] > mundo['objetos_max']:
            problemas.append("rango de objetos vacio")
        if not 0.0 < cfg['rastreo']['tau'] < 1.0:
            problemas.append("tau debe estar en (0, 1)")
        if abl['architecture'] not in ConfiguracionSistema.ARQUITECTURAS:
            problemas.append(f"arquitectura desconocida: {abl['architecture']}")
        if abl['velocity_mode'] not in ConfiguracionSistema.MODOS_VELOCIDAD:
            problemas.append(f"modo de velocidad desconocido: {abl['velocity_mode']}")
        if abl['velocity_mode'] == 'derive-from-unimodal' and m['t_pasado'] < 1:
            problemas.append("derive-from-unimodal necesita t_pasado >= 1")
        if abl['unimodal_horizon_s'] <= 0:
            problemas.append("unimodal_horizon_s debe ser positivo")
        if abl['queue_length'] < 1:
            problemas.append("queue_length debe ser >= 1")
        if abl['architecture'] == 'sequential':
            inter = abl['interactions']
            if inter['obj_mt'] or inter['mt_map']:
                problemas.append("la arquitectura secuencial no admite interacciones con consultas de movimiento")

        if problemas:
            raise ErrorConfiguracion("; ".join(problemas))
        return True

    @staticmethod
    def verificar_dependencias():
        """
        Verifica que todas las dependencias esten instaladas

        Returns:
            dict: Estado de las dependencias
        """
        dependencias = {}
        for modulo in ('numpy', 'scipy', 'pandas', 'matplotlib', 'seaborn', 'motmetrics', 'dotenv'):
            try:
                __import__(modulo)
                dependencias[modulo] = True
            except ImportError:
                dependencias[modulo] = False
        return dependencias


def mostrar_diagnostico():
    """Muestra el diagnostico del sistema"""
    print("=" * 60)
    print("DIAGNOSTICO DEL SISTEMA")
    print("=" * 60)

    info = ConfiguracionSistema.obtener_info_sistema()
    print(f"{info['nombre']} v{info['version']} (esquema {info['esquema']})")
    print(f"Directorio de ejecuciones: {info['directorio_ejecuciones']}")

    print("\nDependencias:")
    for dep, estado in ValidadorConfiguracion.verificar_dependencias().items():
        estado_texto = "OK" if estado else "FALTANTE"
        print(f"  - {dep}: {estado_texto}")

    print("\n" + "=" * 60)


if __name__ == "__main__":
    mostrar_diagnostico()
