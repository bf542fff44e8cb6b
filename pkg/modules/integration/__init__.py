"""
Configuration, presets and experiment orchestration.
"""
