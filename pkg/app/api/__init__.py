"""
API de la aplicacion.
"""
