"""
Modelos de domínio (pydantic)
"""
