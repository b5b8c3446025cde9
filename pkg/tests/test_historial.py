# test_historial.py
"""
Pruebas de historiales, volcados y graficas
"""

import numpy as np

from atribucion import ReporteAtribucion
from historial import HistorialEjecuciones, HistorialEntrenamiento, cargar_volcado, guardar_volcado
from visualizaciones import VisualizadorEntrenamiento


def test_historial_de_entrenamiento(tmp_path):
    historial = HistorialEntrenamiento(str(tmp_path / 'sub' / 'entrenamiento.jsonl'))
    assert historial.como_dataframe().empty
    historial.registrar({'etapa': 1, 'paso': 0, 'perdida': np.float64(2.5), 'deteccion': 1.0})
    historial.registrar({'etapa': 1, 'paso': 1, 'perdida': 2.0, 'normas_gradiente': {'unimodal': {'x': 0.0}}})
    tabla = historial.como_dataframe()
    assert list(tabla['perdida']) == [2.5, 2.0]
    assert len(historial.auditorias()) == 1


def test_historial_de_ejecuciones(tmp_path):
    historial = HistorialEjecuciones(str(tmp_path / 'ejecuciones.csv'))
    assert historial.guardar_ejecucion('train', 'abc', '/tmp/x')
    historial.guardar_ejecucion('eval', 'abc', '/tmp/x', 'error')
    ultimas = historial.obtener_historial()
    assert [e['subcomando'] for e in ultimas] == ['eval', 'train']


def test_volcado_jsonl_convierte_tipos_numpy(tmp_path):
    volcado = [{'frame': np.int64(0), 'plan': np.zeros((2, 2))}, {'frame': 1, 'plan': None}]
    ruta = guardar_volcado(volcado, str(tmp_path / 'v' / 'episodio.jsonl'))
    assert cargar_volcado(ruta) == [{'frame': 0, 'plan': [[0.0, 0.0], [0.0, 0.0]]}, {'frame': 1, 'plan': None}]


def test_graficas_svg_deterministas(tmp_path):
    historial = HistorialEntrenamiento(str(tmp_path / 'entrenamiento.jsonl'))
    for paso in range(3):
        historial.registrar({'etapa': 1 + paso // 2, 'paso': paso, 'perdida': 1.0 / (paso + 1)})
    visualizador = VisualizadorEntrenamiento(str(tmp_path / 'graficas'))
    a = open(visualizador.grafica_perdidas(historial.como_dataframe(), 'a.svg'), 'rb').read()
    b = open(visualizador.grafica_perdidas(historial.como_dataframe(), 'b.svg'), 'rb').read()
    assert a == b
    reporte = ReporteAtribucion({1: [1.0, 0.5], 2: [2.0, 0.0]})
    assert visualizador.grafica_atribucion(reporte).endswith('atribucion.svg')
