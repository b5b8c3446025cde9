# modelo.py
"""
Modelo completo: codificador de tokens compartido, decodificador semantico,
decodificador de movimiento y cabezas, en cableado dividido o secuencial
"""

import numpy as np

import autograd as ag
from capas import MLP, AtencionMultiCabeza, Modulo, NormaCapa, mascara_por_bloques
from config import ErrorConfiguracion, pasos_unimodales
from decodificador_movimiento import (CabezasMovimiento, DecodificadorMovimiento, motion_layer,
                                      plan_ego, predict_multimodal, predict_unimodal,
                                      velocity_from_trajectory, velocity_variant)
from decodificador_semantico import MARGEN_REFERENCIA, DecodificadorSemantico, run_semantic_decoder
from optimizador import cargar_checkpoint, guardar_checkpoint
from simulador import CANALES_TOKEN

# Canales de conteo a los que se aplica log1p
CANALES_CONTEO = [0, 3, 4, 5, 6, 7]

# Grupos de parametros por lado para la auditoria de gradientes
GRUPOS_SEMANTICOS = ('consultas_semanticas', 'decodificador_semantico', 'cabezas_semanticas')
GRUPOS_MOVIMIENTO = ('decodificador_movimiento', 'cabezas_movimiento')

# Parametros entrenados solo en la etapa 2
PREFIJOS_ETAPA2 = (
    'cabezas.consulta_ego', 'cabezas.multimodal_atencion.', 'cabezas.multimodal.',
    'cabezas.plan_atencion.', 'cabezas.plan.',
)


class CodificadorTokens(Modulo):
    """MLP compartido sobre las caracteristicas de cada celda y su centro normalizado"""

    def __init__(self, d, radio, rng):
        super().__init__()
        self.radio = float(radio)
        self.mlp = self.submodulo("mlp", MLP([len(CANALES_TOKEN) + 2, d, d], rng))

    def entrada(self, tokens):
        caract = tokens.caracteristicas.copy()
        caract[:, CANALES_CONTEO] = np.log1p(caract[:, CANALES_CONTEO])
        return np.concatenate([caract, tokens.centros / self.radio], axis=1)

    def __call__(self, tokens):
        return self.mlp(ag.Tensor(self.entrada(tokens)))


class BloqueInteraccion(Modulo):
    """Auto-atencion enmascarada sobre [objeto, mapa, movimiento] segun las banderas"""

    def __init__(self, d, cabezas, rng):
        super().__init__()
        self.atencion = self.submodulo("atencion", AtencionMultiCabeza(d, cabezas, rng))
        self.norma = self.submodulo("norma", NormaCapa(d))

    def __call__(self, q_obj, q_map, q_mt, banderas):
        tamanos = [q_obj.shape[0], q_map.shape[0], q_mt.shape[0]]
        conexiones = [par for clave, par in (('obj_map', (0, 1)), ('obj_mt', (0, 2)), ('mt_map', (1, 2)))
                      if banderas.get(clave)]
        mascara = mascara_por_bloques(tamanos, conexiones)
        x = ag.concat([q_obj, q_map, q_mt])
        x = self.norma(x + self.atencion(x, x, x, mascara=mascara))
        return ag.split(x, tamanos)


class SalidaFrame:
    """Todo lo producido por un frame del modelo"""

    def __init__(self, limite_referencia=np.inf):
        self.limite_referencia = limite_referencia
        self.semanticas = []
        self.refs_movimiento = []
        self.unimodales = []
        self.q_mt = None
        self.multimodal = None
        self.plan = None
        self.velocidad = None
        self.registro_orden = []
        self.consultas = None

    @property
    def final(self):
        return self.semanticas[-1]

    @property
    def unimodal(self):
        return self.unimodales[-1]

    def referencias_siguientes(self):
        """(x, y) de s_1 de la trayectoria unimodal final y z de la ultima exportacion, recortados"""
        s1 = self.unimodal.punto(1).data
        refs = np.column_stack([s1, self.final.exportada.data[:, 2]])
        return np.clip(refs, -self.limite_referencia, self.limite_referencia)


class ModeloDMAD(Modulo):
    """
    Modelo de extremo a extremo en arquitectura 'divided' o 'sequential'

    En 'divided' las consultas de movimiento corren en paralelo a las semanticas
    y solo reciben de ellas referencias sin gradiente. En 'sequential' las cabezas
    de movimiento leen Q_obj directamente y la velocidad se regresa desde Q_obj.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        m = cfg['modelo']
        abl = cfg['ablacion']
        self.radio = cfg['mundo']['radio']
        self.dt = cfg['mundo']['dt']
        self.arquitectura = abl['architecture']
        self.banderas = dict(abl['interactions'])
        modo = 'regress-from-obj' if self.arquitectura == 'sequential' else abl['velocity_mode']
        self.cableado_velocidad = velocity_variant(modo)
        self.t_futuro_uni = pasos_unimodales(cfg)

        self.interaccion_movimiento = self.banderas.get('obj_mt') or self.banderas.get('mt_map')
        if self.arquitectura == 'sequential' and self.interaccion_movimiento:
            raise ErrorConfiguracion("la arquitectura secuencial no admite banderas con consultas de movimiento")
        if self.interaccion_movimiento and m['d_mt'] != m['d']:
            raise ErrorConfiguracion("las interacciones con consultas de movimiento requieren d_mt = d")

        rng = np.random.default_rng(m['semilla'])
        rng_dropout = np.random.default_rng(m['semilla'] + 1) if m['dropout'] > 0 else None

        self.codificador = self.submodulo("codificador", CodificadorTokens(m['d'], self.radio, rng))
        self.semantico = self.submodulo("semantico", DecodificadorSemantico(
            m, self.radio, rng, con_velocidad=self.cableado_velocidad.canales_extra_caja > 0,
            rng_dropout=rng_dropout))
        self.movimiento = None
        dm = m['d']
        if self.arquitectura == 'divided':
            self.movimiento = self.submodulo("movimiento", DecodificadorMovimiento(m, self.radio, rng, rng_dropout))
            dm = m['d_mt']
        self.cabezas = self.submodulo("cabezas", CabezasMovimiento(
            m, dm, self.t_futuro_uni, rng, cabeza_velocidad=self.cableado_velocidad.cabeza_mt))
        self.interacciones = []
        if self.interaccion_movimiento:
            self.interacciones = [
                self.submodulo(f"interaccion{l}", BloqueInteraccion(m['d'], m['cabezas'], rng))
                for l in range(m['capas'])
            ]

    # ------------------------------------------------------------------
    # Parametros
    # ------------------------------------------------------------------

    def grupo_de(self, nombre):
        """Grupo de auditoria de un parametro por su nombre completo"""
        if nombre.startswith('codificador.'):
            return 'codificador'
        if nombre.startswith('interaccion'):
            return 'interacciones'
        if nombre.startswith('semantico.'):
            local = nombre.split('.', 1)[1]
            if local.split('.')[0] in ('consultas_obj', 'ref_inicial', 'consultas_mapa', 'posicional_mapa'):
                return 'consultas_semanticas'
            if local.startswith(('cabeza_cajas.', 'cabeza_mapa.')):
                return 'cabezas_semanticas'
            return 'decodificador_semantico'
        if nombre.startswith('movimiento.'):
            return 'decodificador_movimiento'
        return 'cabezas_movimiento'

    def grupos_parametros(self):
        grupos = {}
        for nombre, tensor in self.parametros_nombrados():
            grupos.setdefault(self.grupo_de(nombre), []).append((nombre, tensor))
        return grupos

    def parametros_etapa(self, etapa):
        """Parametros que actualiza el optimizador en la etapa dada"""
        if etapa == 2:
            return self.parametros()
        return [t for nombre, t in self.parametros_nombrados() if not nombre.startswith(PREFIJOS_ETAPA2)]

    def guardar(self, ruta_base, metadatos=None):
        return guardar_checkpoint(self.parametros_nombrados(), ruta_base, metadatos)

    def cargar(self, ruta_base):
        return cargar_checkpoint(self.parametros_nombrados(), ruta_base)

    # ------------------------------------------------------------------
    # Paso por frame
    # ------------------------------------------------------------------

    def consultas_frescas(self):
        """(Q_obj, Q_mt, ref) frescas aprendidas"""
        q_mt = self.movimiento.consultas_mt if self.movimiento is not None else None
        return self.semantico.consultas_obj, q_mt, self.semantico.ref_inicial

    def normas_propagacion(self):
        norma_mt = self.movimiento.norma_propagacion if self.movimiento is not None else None
        return self.semantico.norma_propagacion, norma_mt

    def procesar_frame(self, tokens, consultas, posicion_ego, multimodal=True, plan=True, separado=False):
        """
        Un frame: medicion (exportacion semantica) -> actualizacion (capa de
        movimiento) -> prediccion (trayectoria unimodal) en cada capa

        Args:
            tokens (ConjuntoTokens): Observacion del frame
            consultas (ConsultasIniciales): Salida de rastreador.propagate
            posicion_ego (ndarray): Posicion actual del ego (m)
            multimodal, plan (bool): Calcular las salidas de la etapa 2

        Returns:
            SalidaFrame
        """
        salida = SalidaFrame(self.radio + MARGEN_REFERENCIA)
        salida.consultas = consultas
        z = self.codificador(tokens)
        centros = tokens.centros
        posicion_ego = np.asarray(posicion_ego, dtype=np.float64)[:2]
        t_pasado = self.cabezas.t_pasado

        if self.arquitectura == 'sequential':
            def despues_de_capa(l, capa):
                salida.registro_orden.append(('medicion', l))
                salida.unimodales.append(predict_unimodal(
                    self.cabezas.unimodal, capa.q_obj, t_pasado, self.t_futuro_uni, ancla=capa.exportada))
                salida.registro_orden.append(('prediccion', l))

            salida.semanticas = run_semantic_decoder(
                self.semantico, consultas.q_obj, self.semantico.consultas_mapa, z, consultas.ref, centros,
                {'obj_map': self.banderas.get('obj_map', True)}, despues_de_capa, separado)
            q_movimiento, z_movimiento = salida.final.q_obj, z
            q_ego = self.cabezas.consulta_ego
        else:
            z_movimiento = self.movimiento.proyectar_tokens(z)
            n = consultas.q_mt.shape[0]
            ref_ego = ag.Tensor(np.array([[posicion_ego[0], posicion_ego[1], 0.0]]))
            estado = {'q_mt': ag.concat([consultas.q_mt, self.cabezas.consulta_ego])}

            def despues_de_capa(l, capa):
                salida.registro_orden.append(('medicion', l))
                reemplazo = None
                if self.interacciones:
                    q_obj, q_map, q_mt = self.interacciones[l](capa.q_obj, capa.q_map, estado['q_mt'][0:n],
                                                               self.banderas)
                    estado['q_mt'] = ag.concat([q_mt, estado['q_mt'][n:n + 1]])
                    reemplazo = (q_obj, q_map)
                ref = ag.concat([capa.exportada, ref_ego])
                salida.refs_movimiento.append(ref.data[:n])
                pos = self.movimiento.embedding_posicional(ref)
                estado['q_mt'] = motion_layer(self.movimiento.capas[l], estado['q_mt'], z_movimiento, ref,
                                              centros, pos)
                salida.registro_orden.append(('actualizacion', l))
                salida.unimodales.append(predict_unimodal(
                    self.cabezas.unimodal, estado['q_mt'][0:n], t_pasado, self.t_futuro_uni,
                    ancla=capa.exportada))
                salida.registro_orden.append(('prediccion', l))
                return reemplazo

            salida.semanticas = run_semantic_decoder(
                self.semantico, consultas.q_obj, self.semantico.consultas_mapa, z, consultas.ref, centros,
                {'obj_map': self.banderas.get('obj_map', True)}, despues_de_capa, separado)
            q_movimiento = estado['q_mt'][0:n]
            q_ego = estado['q_mt'][n:n + 1]

        salida.q_mt = q_movimiento
        final = salida.final

        modo = self.cableado_velocidad.modo
        if modo == 'derive-from-unimodal':
            salida.velocidad = velocity_from_trajectory(salida.unimodal, self.dt)
        elif modo == 'regress-from-obj':
            salida.velocidad = final.cajas.velocidad
        elif modo == 'regress-from-mt':
            salida.velocidad = self.cabezas.velocidad(q_movimiento)

        if multimodal:
            salida.multimodal = predict_multimodal(self.cabezas, q_movimiento, z_movimiento, final.exportada,
                                                   centros, ancla=final.exportada)
        if plan:
            salida.plan = plan_ego(self.cabezas, q_ego, z_movimiento, posicion_ego, centros)
        return salida


def orden_esperado(capas, arquitectura='divided'):
    """Registro de orden que debe producir procesar_frame"""
    orden = []
    for l in range(capas):
        orden.append(('medicion', l))
        if arquitectura == 'divided':
            orden.append(('actualizacion', l))
        orden.append(('prediccion', l))
    return orden
