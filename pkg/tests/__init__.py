"""
Tests de la API.
"""
