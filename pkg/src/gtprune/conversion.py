"""Typed load/dump of configuration documents and reports.

Converters are resolved per type by a `ReportContext`; attrs classes are
converted field by field, and any failure is re-raised as a `LoadError` whose
`ErrorInfo` nests down to the offending field.
"""
import math
import numbers
from enum import Enum, EnumMeta
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Type,
    TypeVar,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

import attr

from gtprune.analysis import IntegerInterval, LogSpaceNumber
from gtprune.common import (
    NOT_PROVIDED,
    IConverter,
    IConverterFactory,
    ISerializationContext,
    TypeOrCallable,
)
from gtprune.errors import BaseError, DumpError, ErrorInfo, LoadError

__all__ = [
    "dump",
    "load",
    "ReportContext",
    "SIGNIFICANT_DIGITS",
    # Converters
    "PrimitiveTypeConverter",
    "FloatConverter",
    "NoneConverter",
    "ListConverter",
    "TupleConverter",
    "UnionTypeConverter",
    "EnumConverter",
    "AttrsConverter",
    "DiscriminatedConverter",
    "LogSpaceNumberConverter",
    "IntegerIntervalConverter",
    # Factories
    "AttrsConverterFactory",
    "DiscriminatedConverterFactory",
]

_T = TypeVar("_T")

SIGNIFICANT_DIGITS = 12


def _target(key: Any) -> Optional[str]:
    return str(key) if key is not NOT_PROVIDED else None


class PrimitiveTypeConverter(IConverter[Any]):
    __slots__ = "tp", "fallback"

    def __init__(self, tp: type, *fallback: type):
        self.tp = tp
        self.fallback = fallback

    def dump(self, obj: Any, context: ISerializationContext) -> Any:
        return obj

    def load(self, data: Any, key: Any, context: ISerializationContext) -> Any:
        # bool is an int subclass, but True is never a valid count
        if isinstance(data, bool) and self.tp is not bool:
            raise LoadError(
                ErrorInfo.invalid_type(expected=self.tp, actual=bool, target=_target(key))
            )
        if isinstance(data, self.tp):
            return data
        if isinstance(data, self.fallback):
            return self.tp(data)
        raise LoadError(
            ErrorInfo.invalid_type(expected=self.tp, actual=type(data), target=_target(key))
        )


class IntConverter(PrimitiveTypeConverter):
    def __init__(self) -> None:
        super().__init__(int, float)

    def load(self, data: Any, key: Any, context: ISerializationContext) -> Any:
        if isinstance(data, float) and not data.is_integer():
            raise LoadError(
                ErrorInfo(
                    message=f"Expected an integer, got {data}",
                    code="invalid_type",
                    target=_target(key),
                )
            )
        return super().load(data, key, context)


class FloatConverter(IConverter[float]):
    """Dumps floats rounded to `digits` significant digits; non-finite values as strings"""

    __slots__ = "digits"

    def __init__(self, digits: int = SIGNIFICANT_DIGITS):
        self.digits = digits

    def dump(self, obj: float, context: ISerializationContext) -> Any:
        if not isinstance(obj, numbers.Real):
            raise DumpError(ErrorInfo.invalid_type(expected=float, actual=type(obj)))
        value = float(obj)
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.{self.digits}g}")

    def load(self, data: Any, key: Any, context: ISerializationContext) -> float:
        if isinstance(data, (int, float)) and not isinstance(data, bool):
            return float(data)
        if isinstance(data, str) and data in ("inf", "-inf", "nan"):
            return float(data)
        raise LoadError(
            ErrorInfo.invalid_type(expected=float, actual=type(data), target=_target(key))
        )


class NoneConverter(IConverter[None]):
    def dump(self, obj: None, context: ISerializationContext) -> None:
        if obj is not None:
            raise DumpError(ErrorInfo.invalid_type(expected=type(None), actual=type(obj)))
        return None

    def load(self, data: Any, key: Any, context: ISerializationContext) -> None:
        if data is not None:
            raise LoadError(
                ErrorInfo.invalid_type(expected=type(None), actual=type(data), target=_target(key))
            )
        return None


class ListConverter(IConverter[List[_T]]):
    __slots__ = "item_converter", "factory"

    def __init__(self, item_converter: IConverter[_T], factory: Callable[[Iterable[_T]], Any] = list):
        self.item_converter = item_converter
        self.factory = factory

    def dump(self, obj: Sequence[_T], context: ISerializationContext) -> Any:
        return [self.item_converter.dump(v, context) for v in obj]

    def _try_load(self, value: Any, index: int, key: Any, context: ISerializationContext) -> Any:
        try:
            return self.item_converter.load(value, index, context)
        except LoadError as e:
            e.info = ErrorInfo(
                message="Failed to load list",
                code="list_load_error",
                target=_target(key),
                details=[
                    ErrorInfo(
                        message=f"Failed to load list element at index {index}",
                        code="list_element_load_error",
                        target=str(index),
                        details=[e.info],
                    )
                ],
            )
            raise

    def load(self, data: Any, key: Any, context: ISerializationContext) -> Any:
        if isinstance(data, (str, bytes, Mapping)) or data is None:
            raise LoadError(
                ErrorInfo(
                    message=f"Expected list, got {type(data).__name__}",
                    code="list_load_error",
                    target=_target(key),
                )
            )
        try:
            iterable = iter(data)
        except TypeError:
            raise LoadError(
                ErrorInfo(message="Failed to load list", code="list_load_error", target=_target(key))
            ) from None
        return self.factory(
            self._try_load(value, index, key, context) for index, value in enumerate(iterable)
        )


class TupleConverter(IConverter[Tuple[Any, ...]]):
    """Fixed-length ``Tuple[A, B]``"""

    __slots__ = "converters"

    def __init__(self, *converters: IConverter[Any]):
        self.converters = converters

    def dump(self, obj: Tuple[Any, ...], context: ISerializationContext) -> Any:
        return [converter.dump(value, context) for converter, value in zip(self.converters, obj)]

    def load(self, data: Any, key: Any, context: ISerializationContext) -> Tuple[Any, ...]:
        if not isinstance(data, (list, tuple)) or len(self.converters) != len(data):
            raise LoadError(
                ErrorInfo(
                    message=f"Expected {len(self.converters)} values in tuple, got {data!r}",
                    code="invalid_tuple_len",
                    target=_target(key),
                )
            )
        return tuple(
            converter.load(value, i, context)
            for i, (converter, value) in enumerate(zip(self.converters, data))
        )


class UnionTypeConverter(IConverter[Any]):
    __slots__ = "converters"

    def __init__(self, *converters: IConverter[Any]):
        self.converters = converters

    def dump(self, obj: Any, context: ISerializationContext) -> Any:
        errors = []
        for converter in self.converters:
            try:
                return converter.dump(obj, context)
            except DumpError as e:
                errors.append(e.info)
        raise DumpError(
            ErrorInfo(
                message="Unable to dump union type: no suitable converter found",
                code="union_dump_error",
                details=errors,
            )
        )

    def load(self, data: Any, key: Any, context: ISerializationContext) -> Any:
        errors = []
        for converter in self.converters:
            try:
                return converter.load(data, key, context)
            except LoadError as e:
                errors.append(e.info)
        raise LoadError(
            ErrorInfo(
                message="Unable to load union type: no suitable converter found",
                code="union_load_error",
                details=errors,
                target=_target(key),
            )
        )


_TEnum = TypeVar("_TEnum", bound=Enum)


class EnumConverter(IConverter[_TEnum]):
    __slots__ = "enum_class"

    def __init__(self, enum_class: Type[_TEnum]):
        self.enum_class = enum_class

    def dump(self, obj: _TEnum, context: ISerializationContext) -> Any:
        return obj.value

    def load(self, data: Any, key: Any, context: ISerializationContext) -> _TEnum:
        try:
            return self.enum_class(data)
        except ValueError:
            allowed = ", ".join(repr(member.value) for member in self.enum_class)
            raise LoadError(
                ErrorInfo(
                    message=f"Invalid value {data!r}, expected one of {allowed}",
                    code="invalid_choice",
                    target=_target(key),
                )
            ) from None


class LogSpaceNumberConverter(IConverter[LogSpaceNumber]):
    """Universe sizes: a plain integer or ``"pow2:<exponent>"``"""

    def dump(self, obj: LogSpaceNumber, context: ISerializationContext) -> Any:
        if obj.exact is not None and obj.exact.bit_length() <= 64:
            return obj.exact
        return f"pow2:{obj.log2:.12g}"

    def load(self, data: Any, key: Any, context: ISerializationContext) -> LogSpaceNumber:
        if isinstance(data, bool) or not isinstance(data, (int, str)):
            raise LoadError(
                ErrorInfo(
                    message=f"Expected an integer or 'pow2:<exponent>', got {type(data).__name__}",
                    code="invalid_type",
                    target=_target(key),
                )
            )
        try:
            return LogSpaceNumber.parse(data)
        except BaseError as e:
            raise LoadError(
                ErrorInfo(message=e.message, code=e.code, target=_target(key))
            ) from e


class IntegerIntervalConverter(IConverter[IntegerInterval]):
    def dump(self, obj: IntegerInterval, context: ISerializationContext) -> Any:
        return [obj.lo, obj.hi]

    def load(self, data: Any, key: Any, context: ISerializationContext) -> IntegerInterval:
        lo, hi = TupleConverter(IntConverter(), IntConverter()).load(data, key, context)
        return IntegerInterval(lo, hi)


class AttrsConverter(IConverter[_T]):
    """Loads an attrs class from a mapping keyed by field name and dumps it back"""

    __slots__ = "target", "fields", "dump_none_values"

    def __init__(
        self,
        target: Type[_T],
        fields: List[Tuple[str, IConverter[Any]]],
        dump_none_values: bool = True,
    ):
        self.target = target
        self.fields = fields
        self.dump_none_values = dump_none_values

    def load(self, data: Any, key: Any, context: ISerializationContext) -> _T:
        if not isinstance(data, Mapping):
            raise LoadError(
                ErrorInfo(
                    message=f"Expected mapping, got {type(data).__name__}",
                    code="invalid_type",
                    target=_target(key),
                )
            )

        known = {name for name, _ in self.fields}
        unknown = sorted(str(k) for k in data if k not in known)
        if unknown:
            raise LoadError(
                ErrorInfo(
                    message=f"Unknown fields for {self.target.__qualname__}: {', '.join(unknown)}",
                    code="unknown_fields",
                    target=_target(key),
                )
            )

        kwargs = {}
        for name, converter in self.fields:
            if name not in data:
                continue
            try:
                kwargs[name] = converter.load(data[name], name, context)
            except LoadError as e:
                e.info = ErrorInfo(
                    message=f"Failed to load field {name}",
                    code="attr_load_error",
                    target=_target(key),
                    details=[e.info],
                )
                raise

        try:
            return self.target(**kwargs)
        except BaseError as e:
            raise LoadError(
                ErrorInfo(
                    message=f"Failed to load {self.target.__qualname__}",
                    code="object_load_error",
                    target=_target(key),
                    details=[e.info],
                )
            ) from e
        except (TypeError, ValueError) as e:
            raise LoadError(
                ErrorInfo(
                    message=f"Failed to load {self.target.__qualname__}",
                    code="object_load_error",
                    target=_target(key),
                    details=[ErrorInfo.from_builtin_error(e)],
                )
            ) from e

    def dump(self, obj: _T, context: ISerializationContext) -> Any:
        if obj is None:
            raise DumpError(
                ErrorInfo(message="Expected object, got None", code="none_dump")
            )
        data = {}
        for name, converter in self.fields:
            value = getattr(obj, name)
            try:
                raw_value = converter.dump(value, context)
            except DumpError as e:
                e.info = ErrorInfo(
                    message=f"Failed to dump {type(obj).__qualname__}",
                    code="attribute_dump_error",
                    target=name,
                    details=[e.info],
                )
                raise
            if raw_value is None and not self.dump_none_values:
                continue
            data[name] = raw_value
        return data


class DiscriminatedConverter(IConverter[_T]):
    """One of several attrs classes, selected by a tag field of the mapping"""

    __slots__ = "discriminator_key", "load_map", "dump_map"

    def __init__(
        self,
        converters: Iterable[Tuple[str, TypeOrCallable[_T], IConverter[_T]]],
        discriminator_key: str = "kind",
    ):
        self.discriminator_key = discriminator_key
        self.load_map: Dict[str, IConverter[_T]] = {}
        self.dump_map: Dict[Any, Tuple[str, IConverter[_T]]] = {}
        for discriminator_value, typ, converter in converters:
            self.load_map[discriminator_value] = converter
            self.dump_map[typ] = (discriminator_value, converter)

    def dump(self, obj: _T, context: ISerializationContext) -> Any:
        try:
            discriminator_value, converter = self.dump_map[type(obj)]
        except KeyError:
            raise DumpError(
                ErrorInfo(
                    message=f"No discriminator value registered for {type(obj).__qualname__}",
                    code="unknown_discriminator",
                )
            ) from None
        return {self.discriminator_key: discriminator_value, **converter.dump(obj, context)}

    def load(self, data: Any, key: Any, context: ISerializationContext) -> _T:
        if not isinstance(data, Mapping):
            raise LoadError(
                ErrorInfo(
                    message=f"Expected mapping, got {type(data).__name__}",
                    code="invalid_type",
                    target=_target(key),
                )
            )
        discriminator_value = data.get(self.discriminator_key)
        if discriminator_value not in self.load_map:
            allowed = ", ".join(sorted(self.load_map))
            raise LoadError(
                ErrorInfo(
                    message=(
                        f"Unknown {self.discriminator_key} {discriminator_value!r},"
                        f" expected one of {allowed}"
                    ),
                    code="unknown_discriminator",
                    target=_target(key),
                )
            )
        payload = {k: v for k, v in data.items() if k != self.discriminator_key}
        return self.load_map[discriminator_value].load(payload, key, context)


class AttrsConverterFactory(IConverterFactory[Any]):
    __slots__ = "dump_none_values"

    def __init__(self, dump_none_values: bool = True):
        self.dump_none_values = dump_none_values

    def try_create_converter(
        self, tp: TypeOrCallable[Any], context: ISerializationContext
    ) -> Optional[AttrsConverter[Any]]:
        if not isinstance(tp, type) or not attr.has(tp):
            return None
        hints = get_type_hints(tp)
        fields = [
            (field.name, context.get_converter(hints[field.name]))
            for field in attr.fields(tp)
            if field.init
        ]
        return AttrsConverter(tp, fields, self.dump_none_values)


class DiscriminatedConverterFactory(IConverterFactory[_T]):
    __slots__ = "discriminator_type_map", "converter_factory", "discriminator_key"

    def __init__(
        self,
        discriminator_type_map: Mapping[str, TypeOrCallable[_T]],
        converter_factory: IConverterFactory[_T],
        discriminator_key: str = "kind",
    ):
        self.discriminator_type_map = discriminator_type_map
        self.converter_factory = converter_factory
        self.discriminator_key = discriminator_key

    def try_create_converter(
        self, tp: TypeOrCallable[Any], context: ISerializationContext
    ) -> Optional[IConverter[_T]]:
        # The union of the tagged types is requested, not a single member
        if get_origin(tp) is not Union or set(get_args(tp)) != set(
            self.discriminator_type_map.values()
        ):
            return None
        converters = []
        for discriminator, member in self.discriminator_type_map.items():
            converter = self.converter_factory.try_create_converter(member, context)
            if converter:
                converters.append((discriminator, member, converter))
        return DiscriminatedConverter(converters, discriminator_key=self.discriminator_key)


class _GenericConverterFactory(IConverterFactory[Any]):
    """``List[X]``, ``Tuple[X, ...]``, ``Tuple[A, B]``, ``Optional[X]`` and enums"""

    def try_create_converter(
        self, tp: TypeOrCallable[Any], context: ISerializationContext
    ) -> Optional[IConverter[Any]]:
        if isinstance(tp, EnumMeta):
            return EnumConverter(tp)
        origin = get_origin(tp)
        args = get_args(tp)
        if origin in (list, Sequence) and args:
            return ListConverter(context.get_converter(args[0]))
        if origin is tuple and args:
            if len(args) == 2 and args[1] is Ellipsis:
                return ListConverter(context.get_converter(args[0]), factory=tuple)
            return TupleConverter(*(context.get_converter(arg) for arg in args))
        if origin is Union:
            return UnionTypeConverter(*(context.get_converter(arg) for arg in args))
        return None


class ReportContext(ISerializationContext):
    """Converters for configs and reports; floats keep `digits` significant digits"""

    __slots__ = "_converters", "converter_factories"

    def __init__(self, digits: int = SIGNIFICANT_DIGITS) -> None:
        self._converters: Dict[Any, IConverter[Any]] = {}
        self.converter_factories: List[IConverterFactory[Any]] = [
            _GenericConverterFactory(),
            AttrsConverterFactory(),
        ]
        self.add_converter(int, IntConverter())
        self.add_converter(float, FloatConverter(digits))
        self.add_converter(str, PrimitiveTypeConverter(str))
        self.add_converter(bool, PrimitiveTypeConverter(bool))
        self.add_converter(type(None), NoneConverter())
        self.add_converter(LogSpaceNumber, LogSpaceNumberConverter())
        self.add_converter(IntegerInterval, IntegerIntervalConverter())

    def add_converter(self, t: TypeOrCallable[_T], converter: IConverter[_T]) -> None:
        self._converters[t] = converter

    def add_factory(self, factory: IConverterFactory[Any]) -> None:
        """Registers a factory ahead of the defaults"""
        self.converter_factories.insert(0, factory)

    def get_converter(self, tp: TypeOrCallable[_T]) -> IConverter[_T]:
        converter = self._converters.get(tp)
        if converter is not None:
            return converter
        for factory in self.converter_factories:
            converter = factory.try_create_converter(tp, self)
            if converter is not None:
                self._converters[tp] = converter
                return converter
        raise KeyError(f"No converter found for type: {tp}")


_DEFAULT_CONTEXT: ISerializationContext = ReportContext()


def load(
    typ: Any,
    data: Any,
    *,
    key: Any = NOT_PROVIDED,
    context: ISerializationContext = _DEFAULT_CONTEXT,
) -> Any:
    converter = context.get_converter(typ)
    return converter.load(data, key, context)


def dump(
    obj: Any,
    typ: Any = None,
    context: ISerializationContext = _DEFAULT_CONTEXT,
) -> Any:
    converter = context.get_converter(typ if typ is not None else type(obj))
    return converter.dump(obj, context)
