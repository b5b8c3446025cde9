# main.py
"""
DMAD DE ESCRITORIO
Linea de comandos que integra generacion, entrenamiento, evaluacion, ablacion,
lazo cerrado, atribucion y reportes
"""

import argparse
import glob
import json
import os
import sys

import pandas as pd

from atribucion import attribution
from config import (ConfiguracionSistema, ErrorConfiguracion, ErrorSistema, aplicar_cambios,
                    cargar_configuracion, construir_configuracion, hash_configuracion)
from entrenamiento import AblationFlags, train_two_stage
from evaluacion import cargar_modelo, closed_loop_rollout, evaluar_modelo
from historial import HistorialEjecuciones, HistorialEntrenamiento, guardar_volcado
from simulador import cargar_manifiesto, escribir_manifiesto, gen_episode, guardar_episodio
from visualizaciones import VisualizadorEntrenamiento, grafica_atribucion, grafica_perdidas

COLUMNAS_ABLACION = ['fila', 'mAP', 'mAVE', 'MOTA', 'IDS', 'map_AP', 'EPA', 'minADE', 'l2_avg', 'collision_avg']
COLUMNAS_DELTAS = ['semilla', 'arquitectura', 'mAP_etapa1', 'mAP_etapa2', 'delta_mAP',
                   'gini_etapa1', 'gini_etapa2', 'delta_gini']
ARCHIVO_TENDENCIAS = 'tendencias.json'
FRACCION_TENDENCIA = 0.8
TOLERANCIA_MAP = 0.01


def filas_ablacion(rejilla):
    """
    Filas (nombre, cambios de ablacion) de cada rejilla

    Raises:
        ErrorConfiguracion: Si la rejilla no existe
    """
    if rejilla == 'queue':
        return [(f"q{a}-{b}", {'entrenamiento': {'queue_length_stage1': a, 'queue_length_stage2': b}})
                for a, b in ((3, 3), (5, 3), (5, 5))]
    if rejilla == 'horizon':
        return [(f"{int(h)}s", {'ablacion': {'unimodal_horizon_s': h}})
                for h in ConfiguracionSistema.HORIZONTES_UNIMODALES]
    if rejilla == 'interactions':
        filas = []
        for nombre, clave in (('obj-mt', 'obj_mt'), ('mt-map', 'mt_map'), ('obj-map', 'obj_map')):
            banderas = {'obj_map': False, 'obj_mt': False, 'mt_map': False}
            banderas[clave] = True
            filas.append((nombre, {'ablacion': {'interactions': banderas}}))
        return filas
    if rejilla == 'velocity':
        return [(modo, {'ablacion': {'velocity_mode': modo}}) for modo in ConfiguracionSistema.MODOS_VELOCIDAD]
    raise ErrorConfiguracion(f"rejilla de ablacion desconocida: {rejilla}")


def rango_semillas(texto):
    """'a..b' -> range(a, b) (b excluido)"""
    try:
        inicio, fin = texto.split('..')
        return list(range(int(inicio), int(fin)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"rango de semillas invalido '{texto}' (formato a..b)")


def _pares_por_semilla(pivote, valor):
    """Columnas divided/sequential de un valor, solo para semillas con ambas arquitecturas"""
    if valor not in pivote.columns.get_level_values(0):
        return None
    tabla = pivote[valor]
    if not {'divided', 'sequential'} <= set(tabla.columns):
        return None
    return tabla[['divided', 'sequential']].dropna()


def _tendencia(cumple):
    semillas = int(len(cumple))
    conteo = int(cumple.sum())
    return {'semillas': semillas, 'cumplen': conteo,
            'aprobado': bool(semillas > 0 and conteo >= FRACCION_TENDENCIA * semillas)}


def reporte_deltas(raiz):
    """
    Delta etapa2 - etapa1 de mAP y Gini por semilla y arquitectura, recorriendo
    los directorios de ejecucion bajo raiz

    La tendencia de transferencia cuenta las semillas donde el delta de mAP de la
    arquitectura dividida supera al de la secuencial sin que su mAP caiga mas de
    TOLERANCIA_MAP; la de atribucion, las semillas donde el delta de Gini de la
    secuencial supera al de la dividida. Cada una aprueba con FRACCION_TENDENCIA
    de las semillas pareadas.

    Returns:
        tuple: (DataFrame por corrida, dict con las tendencias 'transferencia' y 'atribucion')
    """
    filas = []
    for ruta_cfg in sorted(glob.glob(os.path.join(raiz, '*', 'configuracion.json'))):
        directorio = os.path.dirname(ruta_cfg)
        metricas = [os.path.join(directorio, f"metricas_etapa{e}.csv") for e in (1, 2)]
        resumen_atr = os.path.join(directorio, 'atribucion_resumen.json')
        if not all(os.path.exists(r) for r in metricas):
            continue
        with open(ruta_cfg, 'r', encoding='utf-8') as archivo:
            cfg = json.load(archivo)
        map1, map2 = (pd.read_csv(r)['mAP'].iloc[0] for r in metricas)
        fila = {'semilla': cfg['modelo']['semilla'], 'arquitectura': cfg['ablacion']['architecture'],
                'mAP_etapa1': map1, 'mAP_etapa2': map2, 'delta_mAP': map2 - map1}
        if os.path.exists(resumen_atr):
            with open(resumen_atr, 'r', encoding='utf-8') as archivo:
                atr = json.load(archivo)
            fila.update({'gini_etapa1': atr['gini_etapa1'], 'gini_etapa2': atr['gini_etapa2'],
                         'delta_gini': atr['delta_gini']})
        filas.append(fila)
    tabla = pd.DataFrame(filas, columns=COLUMNAS_DELTAS)
    tabla = tabla.astype({columna: float for columna in COLUMNAS_DELTAS[2:]})

    vacia = pd.Series([], dtype=bool)
    transferencia, atribucion = vacia, vacia
    if not tabla.empty:
        pivote = tabla.pivot_table(index='semilla', columns='arquitectura',
                                   values=['mAP_etapa1', 'mAP_etapa2', 'delta_mAP', 'delta_gini'])
        deltas_map = _pares_por_semilla(pivote, 'delta_mAP')
        if deltas_map is not None:
            semillas = deltas_map.index
            dividida1 = pivote[('mAP_etapa1', 'divided')].loc[semillas]
            dividida2 = pivote[('mAP_etapa2', 'divided')].loc[semillas]
            transferencia = ((deltas_map['divided'] > deltas_map['sequential'])
                             & (dividida2 >= dividida1 - TOLERANCIA_MAP))
        deltas_gini = _pares_por_semilla(pivote, 'delta_gini')
        if deltas_gini is not None:
            atribucion = deltas_gini['sequential'] > deltas_gini['divided']
    return tabla, {'transferencia': _tendencia(transferencia), 'atribucion': _tendencia(atribucion)}


class AplicacionDMAD:
    """
    Aplicacion principal: un metodo por subcomando
    """

    def __init__(self, args):
        self.args = args
        self.verbose = not getattr(args, 'silencioso', False)
        cfg = cargar_configuracion(args.config)
        if args.seed is not None:
            cfg['modelo']['semilla'] = args.seed
            cfg['entrenamiento']['semilla'] = args.seed
        if getattr(args, 'arch', None):
            cfg['ablacion']['architecture'] = args.arch
        self.cfg = construir_configuracion(cfg)
        self.hash = hash_configuracion(self.cfg)
        self.raiz = ConfiguracionSistema.directorio_ejecuciones()
        self.directorio = args.out or os.path.join(self.raiz, self.hash[:12])
        self.historial = HistorialEjecuciones(os.path.join(self.raiz, ConfiguracionSistema.ARCHIVO_HISTORIAL))

    def mostrar_banner(self, titulo):
        if not self.verbose:
            return
        print("\n" + "=" * 60)
        print(f" {titulo.upper()}")
        print("=" * 60)
        print(f"Configuracion: {self.hash[:12]}  ({self.cfg['ablacion']['architecture']})")
        print(f"Directorio: {self.directorio}")
        print("=" * 60 + "\n")

    def _preparar_directorio(self, cfg=None, directorio=None):
        directorio = directorio or self.directorio
        os.makedirs(directorio, exist_ok=True)
        with open(os.path.join(directorio, 'configuracion.json'), 'w', encoding='utf-8') as archivo:
            json.dump(cfg or self.cfg, archivo, indent=2, sort_keys=True)
        return directorio

    def episodios(self, clave):
        """Episodios de entrenamiento o evaluacion (cargados de --datos o generados)"""
        if getattr(self.args, 'datos', None):
            return cargar_manifiesto(self.args.datos)
        semillas = getattr(self.args, 'seeds', None) or list(range(*self.cfg['datos'][clave]))
        return [gen_episode(s, self.cfg['mundo']) for s in semillas]

    # ------------------------------------------------------------------
    # Subcomandos
    # ------------------------------------------------------------------

    def gen(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['generando'])
        semillas = self.args.seeds or list(range(*self.cfg['datos']['semillas_entrenamiento']))
        directorio = self.args.out or os.path.join(self.raiz, 'episodios', hash_configuracion(self.cfg['mundo'])[:12])
        archivos = []
        for semilla in semillas:
            ruta = guardar_episodio(gen_episode(semilla, self.cfg['mundo']), directorio)
            archivos.append(os.path.basename(ruta))
        escribir_manifiesto(directorio, semillas, self.cfg['mundo'], archivos)
        if self.verbose:
            print(f"{len(archivos)} episodios escritos en {directorio}")
        self.directorio = directorio
        return 0

    def train(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['entrenando'])
        directorio = self._preparar_directorio()
        etapas = {'1': (1,), '2': (2,), 'both': (1, 2)}[self.args.stage]
        historial = HistorialEntrenamiento(os.path.join(directorio, 'entrenamiento.jsonl'))
        rutas = train_two_stage(self.cfg, self.episodios('semillas_entrenamiento'), directorio, historial,
                                etapas, os.path.join(directorio, 'etapa1'), self.verbose)
        if self.verbose:
            for etapa, ruta in sorted(rutas.items()):
                print(f"Checkpoint etapa {etapa}: {ruta}")
        return 0

    def _evaluar_etapa(self, etapa, directorio, cfg, episodios):
        modelo = cargar_modelo(cfg, os.path.join(directorio, f"etapa{etapa}"))
        volcados, reporte = evaluar_modelo(modelo, episodios, cfg, hash_configuracion(cfg), self.verbose)
        for indice, volcado in enumerate(volcados):
            guardar_volcado(volcado, os.path.join(directorio, f"volcados_etapa{etapa}", f"episodio_{indice:04d}.jsonl"))
        reporte.guardar_csv(os.path.join(directorio, f"metricas_etapa{etapa}.csv"))
        return reporte

    def eval(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['evaluando'])
        etapas = {'1': (1,), '2': (2,), 'both': (1, 2)}[self.args.stage]
        episodios = self.episodios('semillas_evaluacion')
        for etapa in etapas:
            reporte = self._evaluar_etapa(etapa, self.directorio, self.cfg, episodios)
            if self.verbose:
                print(f"\nEtapa {etapa}")
                reporte.mostrar()
        return 0

    def ablate(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['ablacion'])
        entrenamiento = self.episodios('semillas_entrenamiento')
        evaluacion = [gen_episode(s, self.cfg['mundo']) for s in range(*self.cfg['datos']['semillas_evaluacion'])]
        filas = []
        for nombre, cambios in filas_ablacion(self.args.grid):
            cfg = aplicar_cambios(self.cfg, cambios)
            destino = os.path.join(self.directorio, f"ablacion_{self.args.grid}", nombre)
            directorio = self._preparar_directorio(cfg, destino)
            if self.verbose:
                print(f"\n--- Fila {nombre} ({AblationFlags.desde_configuracion(cfg).architecture}) ---")
            historial = HistorialEntrenamiento(os.path.join(directorio, 'entrenamiento.jsonl'))
            train_two_stage(cfg, entrenamiento, directorio, historial, verbose=self.verbose)
            reporte = self._evaluar_etapa(2, directorio, cfg, evaluacion)
            filas.append({'fila': nombre, **{c: reporte[c] for c in COLUMNAS_ABLACION[1:]}})
        tabla = pd.DataFrame(filas, columns=COLUMNAS_ABLACION)
        ruta = os.path.join(self.directorio, f"ablacion_{self.args.grid}.csv")
        tabla.to_csv(ruta, index=False, float_format='%.6f')
        VisualizadorEntrenamiento(self.directorio).grafica_ablacion(tabla, 'mAP', f"ablacion_{self.args.grid}.svg")
        if self.verbose:
            print("\n" + tabla.to_string(index=False))
        return 0

    def rollout(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['rollout'])
        modelo = None
        if self.args.policy == 'modelo':
            modelo = cargar_modelo(self.cfg, os.path.join(self.directorio, f"etapa{self.args.stage_rollout}"))
        semillas = self.args.seeds or list(range(*self.cfg['datos']['semillas_evaluacion']))
        resultado = closed_loop_rollout(modelo, semillas, self.args.horizon, self.cfg)
        os.makedirs(self.directorio, exist_ok=True)
        with open(os.path.join(self.directorio, f"rollout_{self.args.policy}.json"), 'w', encoding='utf-8') as archivo:
            json.dump({**resultado.a_dict(), 'trayectorias': resultado.trayectorias}, archivo)
        if self.verbose:
            print(f"Pasos: {resultado.pasos}  colision: {resultado.tasa_colision}  avance: {resultado.avance_medio}  "
                  f"terminadas: {resultado.terminadas}")
        return 0

    def attribute(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['atribucion'])
        modelos = [cargar_modelo(self.cfg, os.path.join(self.directorio, f"etapa{e}")) for e in (1, 2)]
        reporte = attribution(modelos[0], modelos[1], self.episodios('semillas_evaluacion'),
                              self.cfg['evaluacion']['permutaciones'], self.cfg, self.cfg['modelo']['semilla'])
        reporte.guardar_csv(os.path.join(self.directorio, 'atribucion.csv'))
        with open(os.path.join(self.directorio, 'atribucion_resumen.json'), 'w', encoding='utf-8') as archivo:
            json.dump(reporte.resumen(), archivo, indent=2, sort_keys=True)
        grafica_atribucion(reporte, self.directorio)
        if self.verbose:
            print(json.dumps(reporte.resumen(), indent=2, sort_keys=True))
        return 0

    def report(self):
        self.mostrar_banner(ConfiguracionSistema.MENSAJES['reporte'])
        os.makedirs(self.directorio, exist_ok=True)
        registro = os.path.join(self.directorio, 'entrenamiento.jsonl')
        historial = HistorialEntrenamiento(registro)
        tabla = historial.como_dataframe()
        tabla.to_csv(os.path.join(self.directorio, 'perdidas.csv'), index=False, float_format='%.6f')
        grafica_perdidas(tabla, self.directorio)
        deltas, tendencias = reporte_deltas(self.raiz)
        deltas.to_csv(os.path.join(self.raiz, 'deltas_etapa.csv'), index=False, float_format='%.6f')
        with open(os.path.join(self.raiz, ARCHIVO_TENDENCIAS), 'w', encoding='utf-8') as archivo:
            json.dump(tendencias, archivo, indent=2, sort_keys=True)
        if self.verbose:
            historial.mostrar_resumen()
            self.historial.mostrar_historial_simple()
            if not deltas.empty:
                print(deltas.to_string(index=False))
                for nombre, tendencia in tendencias.items():
                    estado = "APROBADA" if tendencia['aprobado'] else "NO APROBADA"
                    print(f"Tendencia {nombre}: {tendencia['cumplen']}/{tendencia['semillas']} semillas ({estado})")
        return 0


def construir_parser():
    parser = argparse.ArgumentParser(prog='dmad', description=ConfiguracionSistema.NOMBRE_SISTEMA)
    comun = argparse.ArgumentParser(add_help=False)
    comun.add_argument('--config', default=None, help='Archivo JSON de configuracion')
    comun.add_argument('--seed', type=int, default=None, help='Semilla del modelo y del entrenamiento')
    comun.add_argument('--out', default=None, help='Directorio de salida (por defecto, hash de configuracion)')
    comun.add_argument('--arch', choices=ConfiguracionSistema.ARQUITECTURAS, default=None)
    comun.add_argument('--seeds', type=rango_semillas, default=None, help='Semillas de episodio a..b')
    comun.add_argument('--datos', default=None, help='Directorio de episodios generados con gen')
    comun.add_argument('--silencioso', action='store_true')

    sub = parser.add_subparsers(dest='subcomando', required=True)
    sub.add_parser('gen', parents=[comun], help='Generar episodios')
    for nombre, ayuda in (('train', 'Entrenamiento en dos etapas'), ('eval', 'Metricas de un checkpoint')):
        p = sub.add_parser(nombre, parents=[comun], help=ayuda)
        p.add_argument('--stage', choices=('1', '2', 'both'), default='both')
    p = sub.add_parser('ablate', parents=[comun], help='Rejilla de ablacion')
    p.add_argument('--grid', choices=ConfiguracionSistema.REJILLAS, required=True)
    p = sub.add_parser('rollout', parents=[comun], help='Lazo cerrado')
    p.add_argument('--horizon', type=int, default=12)
    p.add_argument('--policy', choices=('modelo', 'experto'), default='modelo')
    p.add_argument('--stage', dest='stage_rollout', choices=('1', '2'), default='2')
    sub.add_parser('attribute', parents=[comun], help='Atribucion por permutacion')
    sub.add_parser('report', parents=[comun], help='CSV y graficas de los registros')
    return parser


def main(argv=None):
    """
    Punto de entrada

    Returns:
        int: 0 exito, 1 error de ejecucion, 2 error de uso o de configuracion
    """
    parser = construir_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as salida:
        return int(salida.code or 0)

    app = None
    try:
        app = AplicacionDMAD(args)
        codigo = getattr(app, args.subcomando)()
        app.historial.guardar_ejecucion(args.subcomando, app.hash, app.directorio, 'ok')
        return codigo
    except ErrorConfiguracion as error:
        print(f"\n{ConfiguracionSistema.MENSAJES['error_config']}: {error}")
        return 2
    except ErrorSistema as error:
        print(f"\n{ConfiguracionSistema.MENSAJES['error_ejecucion']}: {error}")
        if app is not None:
            app.historial.guardar_ejecucion(args.subcomando, app.hash, app.directorio, 'error')
        return 1


# Punto de entrada de la aplicacion
if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n" + "=" * 60)
        print("Ejecucion cancelada por el usuario")
        print("=" * 60 + "\n")
        sys.exit(1)
