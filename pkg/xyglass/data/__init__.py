"""
Campaign presets and reference tables.
"""
