# visualizaciones.py
"""
Graficas de las corridas
Curvas de perdida, barras de atribucion ordenadas y tablas de ablacion, en SVG
"""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

# Configurar estilo
sns.set_style("whitegrid")
plt.rcParams['figure.figsize'] = (12, 6)
plt.rcParams['font.size'] = 10
plt.rcParams['svg.hashsalt'] = 'dmad'


class VisualizadorEntrenamiento:
    """
    Crea las graficas de reporte de una corrida
    """

    def __init__(self, directorio):
        self.directorio = directorio
        os.makedirs(directorio, exist_ok=True)
        self.colores = {
            'perdida': '#FF6B6B',
            'deteccion': '#45B7D1',
            'mapa': '#96CEB4',
            'unimodal': '#4ECDC4',
            'multimodal': '#FFC107',
            'planificacion': '#9C27B0',
        }

    def _guardar(self, fig, nombre):
        ruta = os.path.join(self.directorio, nombre)
        fig.tight_layout()
        fig.savefig(ruta, format='svg', metadata={'Date': None})
        plt.close(fig)
        return ruta

    def grafica_perdidas(self, tabla, nombre="perdidas.svg"):
        """
        Curvas de perdida por paso, una linea por familia, separadas por etapa

        Args:
            tabla (DataFrame): Salida de HistorialEntrenamiento.como_dataframe()
        """
        fig, ax = plt.subplots(figsize=(12, 6))
        if tabla.empty:
            ax.text(0.5, 0.5, 'Sin pasos registrados', ha='center', va='center', transform=ax.transAxes)
            return self._guardar(fig, nombre)

        tabla = tabla.copy()
        tabla['paso_global'] = np.arange(len(tabla))
        for columna, color in self.colores.items():
            if columna in tabla and tabla[columna].notna().any():
                grosor = 2.0 if columna == 'perdida' else 1.2
                ax.plot(tabla['paso_global'], tabla[columna], color=color, linewidth=grosor, label=columna)
        cambios = tabla.index[tabla['etapa'].diff().fillna(0) != 0]
        for cambio in cambios:
            ax.axvline(x=tabla.loc[cambio, 'paso_global'], color='gray', linestyle='--', alpha=0.6)

        ax.set_xlabel('Paso', fontsize=12, fontweight='bold')
        ax.set_ylabel('Perdida', fontsize=12, fontweight='bold')
        ax.set_title('Perdidas de entrenamiento por familia', fontsize=14, fontweight='bold', pad=20)
        ax.legend(loc='upper right')
        ax.grid(True, alpha=0.3)
        return self._guardar(fig, nombre)

    def grafica_atribucion(self, reporte, nombre="atribucion.svg"):
        """
        Importancias por canal ordenadas de mayor a menor, una barra por etapa,
        y la diferencia etapa1 - etapa2
        """
        etapas = sorted(reporte.importancias)
        paneles = len(etapas) + (1 if reporte.diferencia is not None else 0)
        fig, ejes = plt.subplots(1, paneles, figsize=(6 * paneles, 5))
        ejes = np.atleast_1d(ejes)
        for ax, etapa in zip(ejes, etapas):
            valores = np.sort(reporte.importancias[etapa])[::-1]
            ax.bar(np.arange(len(valores)), valores, color='skyblue', edgecolor='navy')
            ax.set_title(f"Etapa {etapa} (Gini {reporte.gini[etapa]:.3f})", fontsize=12, fontweight='bold')
            ax.set_xlabel('Canal (ordenado)')
            ax.set_ylabel('Importancia')
        if reporte.diferencia is not None:
            ax = ejes[-1]
            valores = np.sort(reporte.diferencia)[::-1]
            colores = ['#4CAF50' if v >= 0 else '#F44336' for v in valores]
            ax.bar(np.arange(len(valores)), valores, color=colores)
            ax.axhline(0.0, color='black', linewidth=0.8)
            ax.set_title('Etapa 1 - Etapa 2', fontsize=12, fontweight='bold')
            ax.set_xlabel('Canal (ordenado)')
        fig.suptitle(f"Atribucion - arquitectura {reporte.arquitectura}", fontsize=14, fontweight='bold')
        return self._guardar(fig, nombre)

    def grafica_ablacion(self, tabla, metrica='mAP', nombre=None):
        """
        Barras de una metrica por fila de ablacion

        Args:
            tabla (DataFrame): Tabla comparativa con columna 'fila'
        """
        nombre = nombre or f"ablacion_{metrica}.svg"
        fig, ax = plt.subplots(figsize=(10, 5))
        if not tabla.empty and metrica in tabla:
            valores = pd.to_numeric(tabla[metrica], errors='coerce').fillna(0.0)
            sns.barplot(x=tabla['fila'].astype(str), y=valores, ax=ax, color='#45B7D1')
            for i, v in enumerate(valores):
                ax.text(i, v, f'{v:.3f}', ha='center', va='bottom', fontsize=10, fontweight='bold')
        ax.set_xlabel('Variante', fontsize=12, fontweight='bold')
        ax.set_ylabel(metrica, fontsize=12, fontweight='bold')
        ax.set_title(f'Ablacion - {metrica}', fontsize=14, fontweight='bold', pad=20)
        return self._guardar(fig, nombre)


def grafica_perdidas(tabla, directorio):
    return VisualizadorEntrenamiento(directorio).grafica_perdidas(tabla)


def grafica_atribucion(reporte, directorio):
    return VisualizadorEntrenamiento(directorio).grafica_atribucion(reporte)
