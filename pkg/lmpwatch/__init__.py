# import lmpwatch.config
#
# config.initialize()

__version__ = "0.1.0"
