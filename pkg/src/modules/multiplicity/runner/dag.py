import inspect
import logging
from functools import wraps
from graphlib import TopologicalSorter
from typing import Any, Callable, Dict, Optional, Set, Tuple

from modules.multiplicity.exceptions import MultiplicityError

logger = logging.getLogger(__name__)


class DAG:
    """
    Directed Acyclic Graph (DAG) of evaluation steps.

    An asset's dependencies are its parameter names; each name is either
    another asset or an input passed to ``execute``. A failing asset is
    recorded and every asset downstream of it is skipped.
    """

    def __init__(self) -> None:
        self.__tasks: Dict[str, Callable[..., Any]] = {}
        self.__dependencies: Dict[str, Set[str]] = {}

    def asset(self, func: Callable[..., Any]) -> Callable[..., Any]:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            return func(*args, **kwargs)

        self.__tasks[func.__name__] = func
        self.__dependencies[func.__name__] = set(inspect.signature(func).parameters)
        return wrapper

    @property
    def assets(self) -> Tuple[str, ...]:
        return tuple(self.build_dag().static_order())

    def build_dag(self) -> TopologicalSorter:
        return TopologicalSorter(self.__dependencies)

    def execute(self, **inputs: Any) -> Tuple[Dict[str, Any], Dict[str, str]]:
        """
        Run every asset not already supplied in ``inputs``.

        Returns:
            (results including the inputs, asset name to error message for failed or skipped assets)

        Raises:
            KeyError: If an asset depends on a name that is neither an asset nor an input.
        """
        results = dict(inputs)
        errors: Dict[str, str] = {}
        for name in self.build_dag().static_order():
            if name in results:
                continue
            if name not in self.__tasks:
                raise KeyError(f"Missing input '{name}'. Provide it to execute() or register an asset for it.")
            failed: Optional[str] = next((dep for dep in self.__dependencies[name] if dep in errors), None)
            if failed is not None:
                errors[name] = f"skipped: upstream '{failed}' failed"
                continue
            try:
                results[name] = self.__tasks[name](**{dep: results[dep] for dep in self.__dependencies[name]})
            except (MultiplicityError, FloatingPointError) as exc:
                logger.warning("Asset '%s' failed: %s", name, exc)
                errors[name] = f"{type(exc).__name__}: {exc}"
        return results, errors
