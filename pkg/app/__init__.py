"""
Aplicacion principal FastAPI.
"""
