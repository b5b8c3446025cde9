# historial.py
"""
Historial de entrenamiento, de ejecuciones y volcados de tracks
Guarda y recupera lo que producen las corridas
"""

import json
import os
from datetime import datetime

import numpy as np
import pandas as pd


def _a_json(valor):
    """Convierte arreglos y escalares de numpy a tipos JSON nativos"""
    if isinstance(valor, dict):
        return {str(k): _a_json(v) for k, v in valor.items()}
    if isinstance(valor, (list, tuple)):
        return [_a_json(v) for v in valor]
    if isinstance(valor, np.ndarray):
        return valor.tolist()
    if isinstance(valor, np.generic):
        return valor.item()
    return valor


class HistorialEntrenamiento:
    """
    Registro de pasos de entrenamiento en JSON-lines
    Un registro por paso: etapa, paso, perdidas y, en pasos auditados,
    normas de gradiente por grupo y registro de orden
    """

    def __init__(self, archivo="entrenamiento.jsonl"):
        self.archivo = archivo
        self.crear_archivo_si_no_existe()

    def crear_archivo_si_no_existe(self):
        if not os.path.exists(self.archivo):
            directorio = os.path.dirname(self.archivo)
            if directorio:
                os.makedirs(directorio, exist_ok=True)
            open(self.archivo, 'w', encoding='utf-8').close()

    def registrar(self, registro):
        """
        Agrega un registro

        Args:
            registro (dict): Debe contener 'etapa', 'paso' y 'perdida'
        """
        with open(self.archivo, 'a', encoding='utf-8') as archivo:
            archivo.write(json.dumps(_a_json(registro), sort_keys=True) + "\n")

    def obtener_registros(self):
        registros = []
        with open(self.archivo, 'r', encoding='utf-8') as archivo:
            for linea in archivo:
                if linea.strip():
                    registros.append(json.loads(linea))
        return registros

    def como_dataframe(self):
        """Perdidas por paso como DataFrame (sin las columnas anidadas de auditoria)"""
        registros = self.obtener_registros()
        columnas = ['etapa', 'paso', 'perdida', 'deteccion', 'mapa', 'unimodal', 'multimodal', 'planificacion']
        if not registros:
            return pd.DataFrame(columns=columnas)
        planos = [{k: v for k, v in r.items() if not isinstance(v, (dict, list))} for r in registros]
        return pd.DataFrame(planos).reindex(columns=columnas)

    def auditorias(self):
        return [r for r in self.obtener_registros() if 'normas_gradiente' in r]

    def mostrar_resumen(self):
        tabla = self.como_dataframe()
        if tabla.empty:
            print("No hay pasos de entrenamiento registrados")
            return
        print("\nRESUMEN DE ENTRENAMIENTO")
        print("=" * 40)
        for etapa, grupo in tabla.groupby('etapa'):
            print(f"Etapa {etapa}: {len(grupo)} pasos, perdida inicial {grupo['perdida'].iloc[0]:.4f}, "
                  f"final {grupo['perdida'].iloc[-1]:.4f}")


class HistorialEjecuciones:
    """
    Una fila CSV por invocacion de la linea de comandos
    """

    COLUMNAS = ['fecha_hora', 'subcomando', 'hash', 'directorio', 'estado']

    def __init__(self, archivo_csv="ejecuciones.csv"):
        self.archivo_csv = archivo_csv
        self.crear_archivo_si_no_existe()

    def crear_archivo_si_no_existe(self):
        if not os.path.exists(self.archivo_csv):
            directorio = os.path.dirname(self.archivo_csv)
            if directorio:
                os.makedirs(directorio, exist_ok=True)
            pd.DataFrame(columns=self.COLUMNAS).to_csv(self.archivo_csv, index=False)

    def guardar_ejecucion(self, subcomando, hash_config="", directorio="", estado="ok"):
        """
        Agrega una fila al historial

        Returns:
            bool: True si se pudo escribir
        """
        try:
            fila = pd.DataFrame([[datetime.now().strftime('%Y-%m-%d %H:%M:%S'), subcomando, hash_config,
                                  directorio, estado]], columns=self.COLUMNAS)
            fila.to_csv(self.archivo_csv, mode='a', header=False, index=False)
            return True
        except OSError as error:
            print(f"Error al guardar ejecucion: {error}")
            return False

    def obtener_historial(self, limite=10):
        """Ultimas ejecuciones, la mas reciente primero"""
        tabla = pd.read_csv(self.archivo_csv)
        return tabla.tail(limite).iloc[::-1].to_dict('records')

    def mostrar_historial_simple(self, limite=5):
        ejecuciones = self.obtener_historial(limite)
        if not ejecuciones:
            print("No hay ejecuciones en el historial")
            return
        print(f"\nULTIMAS {len(ejecuciones)} EJECUCIONES")
        print("-" * 50)
        for i, e in enumerate(ejecuciones, 1):
            print(f"{i}. {e['fecha_hora']}  {e['subcomando']}  [{e['estado']}]")
            print(f"   Directorio: {e['directorio']}")


# ---------------------------------------------------------------------------
# Volcados de tracks
# ---------------------------------------------------------------------------

def guardar_volcado(volcado, ruta):
    """Escribe un volcado de episodio como JSON-lines, un frame por linea"""
    directorio = os.path.dirname(ruta)
    if directorio:
        os.makedirs(directorio, exist_ok=True)
    with open(ruta, 'w', encoding='utf-8') as archivo:
        for frame in volcado:
            archivo.write(json.dumps(_a_json(frame), sort_keys=True) + "\n")
    return ruta


def cargar_volcado(ruta):
    with open(ruta, 'r', encoding='utf-8') as archivo:
        return [json.loads(linea) for linea in archivo if linea.strip()]
