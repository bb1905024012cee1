"""
Modelos y esquemas de la aplicacion.
"""
