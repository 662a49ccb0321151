"""
Services for the DisCo-Diff toy experiments
"""
