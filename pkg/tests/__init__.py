"""
Test suite for sinkgp
"""
