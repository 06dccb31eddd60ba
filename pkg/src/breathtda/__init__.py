"""Sleep staging from respiratory airflow with topological and classical breathing features."""

__version__ = "0.1.0"
