class MomentPICException(Exception):
    """Base for all exceptions in momentpic"""

    pass
